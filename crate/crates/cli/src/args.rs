use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "onestep", version, about = "One-step diffusion super-resolution: train, distill, evaluate, analyse")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent directory for run directories, overriding `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Set a config value by dotted path, e.g. `train.iterations=500`.
    /// Repeatable; applied in order after the file is read.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a synthetic HR corpus into `data.train_dir` and `data.val_dir`.
    MakeDataset,
    /// Pretrain and freeze the codec, then train the multi-step teacher.
    TrainTeacher {
        /// Continue from a `teacher.json` checkpoint (or the run directory
        /// holding one).
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Distill a trained teacher into a one-step student.
    Distill {
        /// Teacher checkpoint or the `train-teacher` run directory.
        #[arg(long, value_name = "CKPT")]
        teacher: PathBuf,
        /// Continue from a `student.json` checkpoint (or its run directory).
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Super-resolve low-resolution PNGs.
    Infer {
        /// Student checkpoint or `distill` run directory (one-step).
        #[arg(long, value_name = "CKPT", conflicts_with = "teacher", required_unless_present = "teacher")]
        student: Option<PathBuf>,
        /// Teacher checkpoint or run directory (all steps).
        #[arg(long, value_name = "CKPT")]
        teacher: Option<PathBuf>,
        /// A PNG file or a directory of PNGs.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Score bicubic, teacher and student on the validation set.
    Eval {
        #[arg(long, value_name = "CKPT")]
        teacher: Option<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        student: Option<PathBuf>,
    },
    /// Trace the teacher's per-step predictions and analyse their spectra.
    AnalyzeSteps {
        #[arg(long, value_name = "CKPT")]
        teacher: PathBuf,
    },
    /// Distill and evaluate the four loss combinations.
    Ablate {
        #[arg(long, value_name = "CKPT")]
        teacher: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MakeDataset => "make-dataset",
            Command::TrainTeacher { .. } => "train-teacher",
            Command::Distill { .. } => "distill",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::AnalyzeSteps { .. } => "analyze-steps",
            Command::Ablate { .. } => "ablate",
        }
    }
}
