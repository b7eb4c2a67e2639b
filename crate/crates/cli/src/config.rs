//! Run configuration: one strict JSON file, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use d2c_core::cnet::CNetArch;
use d2c_core::gnet::{ClsArch, ClsInput, SegArch};
use d2c_core::micrograd::TrainConfig;
use d2c_core::raster::ChannelMode;
use d2c_core::scenegen::{CategorySet, EpisodeConfig, NoiseConfig, SceneConfig};
use d2c_core::simeval::GraspTolerances;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "preset")]
pub enum CategoryPreset {
    /// The seventeen default labels.
    Default,
    /// Default labels plus `twin`, a copy of `base` differing only in height.
    HeightTwin { base: String, twin: String, height: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Training scenes for the grasp network.
    pub scenes: usize,
    /// Held-out scenes for grasp-network evaluation.
    pub test_scenes: usize,
    pub episodes: usize,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub noise: NoiseConfig,
    /// Maximum offset of a placed object from its target's center, pixels.
    pub place_jitter: f64,
    /// Frames per demonstration (also the captioner's encode and decode steps).
    pub frames: usize,
    /// Write every frame as PPM, not only the first and last.
    pub write_all_frames: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scenes: 200,
            test_scenes: 60,
            episodes: 300,
            train_fraction: 0.7,
            test_fraction: 0.3,
            min_objects: 3,
            max_objects: 5,
            noise: NoiseConfig::default(),
            place_jitter: 3.0,
            frames: 30,
            write_all_frames: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GNetConfig {
    pub seg_widths: (usize, usize),
    pub cls_widths: Vec<usize>,
    pub cls_hidden: usize,
    pub crop: usize,
    pub cls_input: ClsInput,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for GNetConfig {
    fn default() -> Self {
        Self {
            seg_widths: (16, 32),
            cls_widths: vec![8, 16, 16],
            cls_hidden: 64,
            crop: 32,
            cls_input: ClsInput::ColorMask,
            init_seed: 7,
            train: gnet_train_defaults(),
        }
    }
}

pub fn gnet_train_defaults() -> TrainConfig {
    TrainConfig {
        lr: 0.3,
        clip_norm: 5.0,
        batch: 10,
        epochs: 30,
        lr_decay: 0.5,
        patience: 2,
        seed: 1,
    }
}

pub fn cnet_train_defaults() -> TrainConfig {
    TrainConfig {
        lr: 0.5,
        clip_norm: 5.0,
        batch: 15,
        epochs: 30,
        lr_decay: 0.5,
        patience: 2,
        seed: 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CNetConfig {
    pub input_pool: usize,
    pub widths: (usize, usize),
    pub feature: usize,
    pub hidden: usize,
    pub embed: usize,
    pub forget_bias: f64,
    pub init_seed: u64,
    /// Build difference maps from ground-truth masks instead of a trained
    /// grasp network's segmentation.
    pub use_oracle_masks: bool,
    pub train: TrainConfig,
}

impl Default for CNetConfig {
    fn default() -> Self {
        let a = CNetArch::new(ChannelMode::Rgb);
        Self {
            input_pool: a.input_pool,
            widths: a.widths,
            feature: a.feature,
            hidden: a.hidden,
            embed: a.embed,
            forget_bias: a.forget_bias,
            init_seed: 3,
            use_oracle_masks: true,
            train: cnet_train_defaults(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraspConfig {
    pub tolerances: GraspTolerances,
    /// Simulated grasp trials in `eval gnet`.
    pub trials: usize,
    /// Tasks in `eval pipeline`.
    pub tasks: usize,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            tolerances: GraspTolerances::default(),
            trials: 120,
            tasks: 20,
        }
    }
}

/// Directories, relative to the output root unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            models: "models".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub canvas: (usize, usize),
    pub categories: CategoryPreset,
    pub channels: ChannelMode,
    pub dataset: DatasetConfig,
    pub gnet: GNetConfig,
    pub cnet: CNetConfig,
    pub grasp: GraspConfig,
    /// Epochs between training checkpoints.
    pub checkpoint_every: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            canvas: (96, 96),
            categories: CategoryPreset::Default,
            channels: ChannelMode::Rgb,
            dataset: DatasetConfig::default(),
            gnet: GNetConfig::default(),
            cnet: CNetConfig::default(),
            grasp: GraspConfig::default(),
            checkpoint_every: 10,
            paths: Paths::default(),
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = &self.dataset;
        if (d.train_fraction + d.test_fraction - 1.0).abs() > 1e-9 || d.train_fraction < 0.0 || d.test_fraction < 0.0 {
            return usage("train_fraction and test_fraction must be non-negative and sum to 1");
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return usage("canvas must be positive");
        }
        if d.min_objects == 0 || d.min_objects > d.max_objects {
            return usage("need 1 <= min_objects <= max_objects");
        }
        if d.frames < 2 {
            return usage("need at least 2 frames per episode");
        }
        if self.checkpoint_every == 0 {
            return usage("checkpoint_every must be positive");
        }
        for (name, t) in [("gnet", &self.gnet.train), ("cnet", &self.cnet.train)] {
            t.validate().map_err(|e| CliError::Usage(format!("{name}.train: {e}")))?;
        }
        let g = &self.gnet;
        if g.seg_widths.0 == 0 || g.seg_widths.1 == 0 || g.cls_hidden == 0 || g.crop == 0 || g.cls_widths.contains(&0) {
            return usage("gnet sizes must be positive");
        }
        let c = &self.cnet;
        if c.feature == 0 || c.embed == 0 || c.widths.0 == 0 || c.widths.1 == 0 {
            return usage("cnet sizes must be positive");
        }
        self.cnet_arch().validate()?;
        self.cls_arch().flat_len()?;
        self.category_set()?;
        Ok(())
    }

    pub fn category_set(&self) -> CliResult<CategorySet> {
        Ok(match &self.categories {
            CategoryPreset::Default => CategorySet::default(),
            CategoryPreset::HeightTwin { base, twin, height } => CategorySet::with_height_twin(base, twin, *height)?,
        })
    }

    pub fn scene_config(&self) -> CliResult<SceneConfig> {
        Ok(SceneConfig {
            canvas: self.canvas,
            min_objects: self.dataset.min_objects,
            max_objects: self.dataset.max_objects,
            categories: self.category_set()?,
            noise: self.dataset.noise,
            ..SceneConfig::default()
        })
    }

    pub fn episode_config(&self) -> CliResult<EpisodeConfig> {
        Ok(EpisodeConfig {
            scene: self.scene_config()?,
            n_frames: self.dataset.frames,
            place_jitter: self.dataset.place_jitter,
        })
    }

    pub fn seg_arch(&self) -> SegArch {
        SegArch {
            in_channels: self.channels.count(),
            widths: self.gnet.seg_widths,
        }
    }

    pub fn cls_arch(&self) -> ClsArch {
        let n_classes = self.category_set().map(|c| c.len()).unwrap_or(0);
        ClsArch {
            in_channels: self.channels.count(),
            size: self.gnet.crop,
            widths: self.gnet.cls_widths.clone(),
            hidden: self.gnet.cls_hidden,
            n_classes,
        }
    }

    pub fn cnet_arch(&self) -> CNetArch {
        let c = &self.cnet;
        CNetArch {
            in_channels: self.channels.count(),
            frame_size: self.canvas,
            input_pool: c.input_pool,
            widths: c.widths,
            feature: c.feature,
            hidden: c.hidden,
            embed: c.embed,
            steps: self.dataset.frames,
            forget_bias: c.forget_bias,
        }
    }

    /// Number of training items out of `n` under the split.
    pub fn train_count(&self, n: usize) -> usize {
        ((n as f64) * self.dataset.train_fraction).round() as usize
    }
}
