//! On-disk dataset: a JSON-lines manifest plus per-item raster files.
//!
//! ```text
//! manifest.jsonl                 header, then one record per scene and episode
//! scenes/s00000/scene.json       authoritative scene description
//! scenes/s00000/image.ppm        8-bit RGB
//! scenes/s00000/depth.pgm        16-bit depth (rgbd only)
//! scenes/s00000/labels.pgm       16-bit labels: 0 background, category + 1
//! episodes/e00000/episode.json   authoritative episode description
//! episodes/e00000/command.txt
//! episodes/e00000/{start,end}.ppm, {start,end}_labels.pgm, {start,end}_depth.pgm
//! episodes/e00000/frames/f00.ppm, f00_labels.pgm, ...   only with `write_all_frames`
//! ```
//!
//! Loaders re-render from the JSON descriptions, which reproduces every
//! frame exactly; the raster files are for inspection and other tools.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use d2c_core::raster::{ChannelMode, RasterFrame};
use d2c_core::scenegen::{derive_seed, generate_episode, generate_scene, render, sample_frames};
use d2c_core::{ActionTriple, Episode, Scene};

use crate::config::RunConfig;
use crate::error::{data, CliError, CliResult};
use crate::pnm;

pub const MANIFEST: &str = "manifest.jsonl";
pub const FORMAT_VERSION: u32 = 1;

/// Seed streams; every item's seed is `derive_seed(run_seed, stream, index)`.
pub const STREAM_TRAIN_SCENE: u64 = 1;
pub const STREAM_TEST_SCENE: u64 = 2;
pub const STREAM_EPISODE: u64 = 3;
pub const STREAM_GRASP: u64 = 4;

/// Items generated and written per round, bounding memory.
const CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub seed: u64,
    pub canvas: (usize, usize),
    pub channels: ChannelMode,
    pub frames: usize,
    pub categories: Vec<String>,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub train_episodes: usize,
    pub test_episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: usize,
    pub split: Split,
    pub seed: u64,
    /// Paths relative to the dataset root.
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: usize,
    pub split: Split,
    pub seed: u64,
    pub action: ActionTriple,
    pub command: String,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Header(Header),
    Scene(SceneRecord),
    Episode(EpisodeRecord),
}

fn scene_dir(id: usize) -> String {
    format!("scenes/s{id:05}")
}

fn episode_dir(id: usize) -> String {
    format!("episodes/e{id:05}")
}

type FileList = Vec<(String, Vec<u8>)>;

fn raster_files(prefix: &str, frame: &RasterFrame, files: &mut FileList) {
    let (h, w) = (frame.height(), frame.width());
    let (image, labels, depth) = if prefix.is_empty() {
        ("image.ppm".to_string(), "labels.pgm".to_string(), "depth.pgm".to_string())
    } else {
        (format!("{prefix}.ppm"), format!("{prefix}_labels.pgm"), format!("{prefix}_depth.pgm"))
    };
    files.push((image, pnm::encode_ppm(frame)));
    if let Some(d) = pnm::depth_values(frame) {
        files.push((depth, pnm::encode_pgm16(w, h, &d)));
    }
    if let Some(l) = &frame.labels {
        files.push((labels, pnm::encode_pgm16(w, h, l)));
    }
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn build_scene(cfg: &RunConfig, id: usize, split: Split, index: usize) -> CliResult<(SceneRecord, FileList)> {
    let stream = if split == Split::Train { STREAM_TRAIN_SCENE } else { STREAM_TEST_SCENE };
    let seed = derive_seed(cfg.seed, stream, index as u64);
    let scene = generate_scene(seed, &cfg.scene_config()?)?;
    let mut files = vec![("scene.json".to_string(), json_bytes(&scene)?)];
    raster_files("", &render(&scene, cfg.channels), &mut files);
    let dir = scene_dir(id);
    let files: FileList = files.into_iter().map(|(n, b)| (format!("{dir}/{n}"), b)).collect();
    let record = SceneRecord {
        id,
        split,
        seed,
        files: files.iter().map(|f| f.0.clone()).collect(),
    };
    Ok((record, files))
}

fn build_episode(cfg: &RunConfig, id: usize, split: Split) -> CliResult<(EpisodeRecord, FileList)> {
    let seed = derive_seed(cfg.seed, STREAM_EPISODE, id as u64);
    let ep = generate_episode(seed, &cfg.episode_config()?)?;
    let mut files = vec![
        ("episode.json".to_string(), json_bytes(&ep)?),
        ("command.txt".to_string(), format!("{}\n", ep.command).into_bytes()),
    ];
    raster_files("start", &render(&ep.start, cfg.channels), &mut files);
    raster_files("end", &render(&ep.end, cfg.channels), &mut files);
    if cfg.dataset.write_all_frames {
        for (k, f) in sample_frames(&ep, cfg.dataset.frames, cfg.channels)?.iter().enumerate() {
            raster_files(&format!("frames/f{k:02}"), f, &mut files);
        }
    }
    let dir = episode_dir(id);
    let files: FileList = files.into_iter().map(|(n, b)| (format!("{dir}/{n}"), b)).collect();
    let record = EpisodeRecord {
        id,
        split,
        seed,
        command: ep.command.to_string(),
        action: ep.action,
        files: files.iter().map(|f| f.0.clone()).collect(),
    };
    Ok((record, files))
}

fn write_files(root: &Path, files: &FileList) -> CliResult<()> {
    for (rel, bytes) in files {
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Writes the dataset described by `cfg` into `root`.
///
/// Items are generated in parallel and written in id order by this thread,
/// so the output does not depend on the worker count. An existing dataset in
/// `root` is replaced only with `force`.
pub fn generate(cfg: &RunConfig, root: &Path, force: bool) -> CliResult<Header> {
    let manifest_path = root.join(MANIFEST);
    if manifest_path.exists() {
        if !force {
            return data(format!("{} already holds a dataset (use --force to replace it)", root.display()));
        }
        for sub in ["scenes", "episodes"] {
            let p = root.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p)?;
            }
        }
        fs::remove_file(&manifest_path)?;
    }
    fs::create_dir_all(root).map_err(|e| CliError::Data(format!("cannot create {}: {e}", root.display())))?;

    let d = &cfg.dataset;
    let train_episodes = cfg.train_count(d.episodes);
    let header = Header {
        version: FORMAT_VERSION,
        seed: cfg.seed,
        canvas: cfg.canvas,
        channels: cfg.channels,
        frames: d.frames,
        categories: cfg.category_set()?.names(),
        train_scenes: d.scenes,
        test_scenes: d.test_scenes,
        train_episodes,
        test_episodes: d.episodes - train_episodes,
    };

    let tmp = root.join(format!("{MANIFEST}.tmp"));
    let mut out = std::io::BufWriter::new(fs::File::create(&tmp)?);
    let mut line = |r: &Record| -> CliResult<()> {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    line(&Record::Header(header.clone()))?;

    let scene_jobs: Vec<(usize, Split, usize)> = (0..d.scenes)
        .map(|k| (k, Split::Train, k))
        .chain((0..d.test_scenes).map(|k| (d.scenes + k, Split::Test, k)))
        .collect();
    for chunk in scene_jobs.chunks(CHUNK) {
        let built: Vec<_> = chunk
            .par_iter()
            .map(|&(id, split, index)| build_scene(cfg, id, split, index))
            .collect::<CliResult<_>>()?;
        for (record, files) in built {
            write_files(root, &files)?;
            line(&Record::Scene(record))?;
        }
    }
    let ids: Vec<usize> = (0..d.episodes).collect();
    for chunk in ids.chunks(CHUNK) {
        let built: Vec<_> = chunk
            .par_iter()
            .map(|&id| build_episode(cfg, id, if id < train_episodes { Split::Train } else { Split::Test }))
            .collect::<CliResult<_>>()?;
        for (record, files) in built {
            write_files(root, &files)?;
            line(&Record::Episode(record))?;
        }
    }
    drop(line);
    out.into_inner().map_err(|e| CliError::Data(e.to_string()))?.sync_all()?;
    fs::rename(&tmp, &manifest_path)?;
    Ok(header)
}

/// A dataset opened from its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub header: Header,
    pub scenes: Vec<SceneRecord>,
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn open(root: &Path) -> CliResult<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines().enumerate();
        let header = match lines.next().map(|(_, l)| serde_json::from_str::<Record>(l)) {
            Some(Ok(Record::Header(h))) => h,
            _ => return data(format!("{}: first record is not a header", path.display())),
        };
        if header.version != FORMAT_VERSION {
            return data(format!("dataset format {} is not supported", header.version));
        }
        let mut scenes = Vec::new();
        let mut episodes = Vec::new();
        for (k, l) in lines {
            match serde_json::from_str::<Record>(l) {
                Ok(Record::Scene(s)) => scenes.push(s),
                Ok(Record::Episode(e)) => episodes.push(e),
                Ok(Record::Header(_)) => return data(format!("{}:{}: second header", path.display(), k + 1)),
                Err(e) => return data(format!("{}:{}: {e}", path.display(), k + 1)),
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            header,
            scenes,
            episodes,
        })
    }

    /// Fails unless the dataset was generated with settings `cfg` can train on.
    pub fn check_config(&self, cfg: &RunConfig) -> CliResult<()> {
        let h = &self.header;
        if h.canvas != cfg.canvas || h.channels != cfg.channels || h.frames != cfg.dataset.frames {
            return data(format!(
                "dataset has canvas {:?}, {:?}, {} frames; config wants {:?}, {:?}, {}",
                h.canvas, h.channels, h.frames, cfg.canvas, cfg.channels, cfg.dataset.frames
            ));
        }
        if h.categories != cfg.category_set()?.names() {
            return data("dataset categories differ from the config's");
        }
        Ok(())
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> CliResult<T> {
        let path = self.root.join(rel);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn scenes(&self, split: Split) -> CliResult<Vec<Scene>> {
        self.scenes
            .par_iter()
            .filter(|r| r.split == split)
            .map(|r| self.read_json(&format!("{}/scene.json", scene_dir(r.id))))
            .collect()
    }

    pub fn episode(&self, id: usize) -> CliResult<Episode> {
        if !self.episodes.iter().any(|r| r.id == id) {
            return data(format!("no episode {id} in {}", self.root.display()));
        }
        self.read_json(&format!("{}/episode.json", episode_dir(id)))
    }

    /// Episodes of one split with their ids.
    pub fn episodes(&self, split: Split) -> CliResult<Vec<(usize, Episode)>> {
        self.episodes
            .par_iter()
            .filter(|r| r.split == split)
            .map(|r| Ok((r.id, self.episode(r.id)?)))
            .collect()
    }
}
