//! The `d2c` command-line tool: dataset generation, training, evaluation,
//! captioning, gradient checks and caption scoring, plus the file formats
//! behind them.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pnm;
pub mod weights;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "d2c", version, about = "Synthetic demonstration-to-command pipeline")]
pub struct Cli {
    /// JSON run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root for the data, models and reports directories.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "D2C_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scenes and demonstration episodes.
    GenData {
        /// Replace an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train a network on the generated dataset.
    Train {
        #[command(subcommand)]
        which: TrainWhich,
    },
    /// Evaluate trained networks and write reports.
    Eval {
        #[command(subcommand)]
        which: EvalWhich,
    },
    /// Caption one demonstration and parse the result.
    Caption(CaptionArgs),
    /// Run the finite-difference gradient checks.
    GradCheck {
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Score candidate sentences against references.
    Metrics {
        /// One candidate per line, whitespace-separated tokens.
        #[arg(long)]
        candidates: PathBuf,
        /// One line per candidate; several references are separated by `|`.
        #[arg(long)]
        references: PathBuf,
    },
}

#[derive(Debug, Clone, Args, Default)]
pub struct TrainOverrides {
    /// Total epochs, counting any already in the checkpoint.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from the last checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum TrainWhich {
    /// The grasp network (segmenter and classifier, trained jointly).
    Gnet(TrainOverrides),
    /// The captioning network.
    Cnet {
        #[command(flatten)]
        train: TrainOverrides,
        /// Difference maps from ground-truth masks rather than the trained grasp network.
        #[arg(long)]
        use_oracle_masks: bool,
        #[arg(long, value_enum, default_value_t = FusionArg::Fused)]
        fusion: FusionArg,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalWhich {
    /// Segmentation, classification and simulated grasp success.
    Gnet,
    /// Caption scores of every trained variant and the bigram baseline.
    Cnet {
        /// Caption with ground-truth masks rather than the trained grasp network's.
        #[arg(long)]
        use_oracle_masks: bool,
    },
    /// Caption → parse → grasp on held-out episodes.
    Pipeline {
        /// Ground-truth detector and captions instead of the trained networks.
        #[arg(long)]
        oracle: bool,
        /// Caption with ground-truth masks rather than the trained grasp network's.
        #[arg(long)]
        use_oracle_masks: bool,
        #[arg(long, value_enum, default_value_t = FusionArg::Fused)]
        fusion: FusionArg,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct CaptionArgs {
    /// Episode id in the dataset.
    #[arg(long, group = "source")]
    pub episode: Option<usize>,
    /// Directory of frames `fNN.ppm` (plus `fNN_depth.pgm` for rgbd and
    /// `fNN_labels.pgm` for oracle masks).
    #[arg(long, group = "source")]
    pub frames: Option<PathBuf>,
    /// Caption with ground-truth masks rather than the trained grasp network's.
    #[arg(long)]
    pub use_oracle_masks: bool,
    #[arg(long, value_enum, default_value_t = FusionArg::Fused)]
    pub fusion: FusionArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Fused,
    FrameOnly,
}

impl From<FusionArg> for d2c_core::cnet::Fusion {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Fused => Self::Fused,
            FusionArg::FrameOnly => Self::FrameOnly,
        }
    }
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("d2c: {e}");
            e.exit_code()
        }
    }
}
