//! Experiment runner for one-step diffusion super-resolution distillation.
//!
//! Every subcommand reads one TOML [`ExperimentConfig`], validates it before
//! doing any work and writes its artifacts into a fresh timestamped run
//! directory together with the resolved configuration.

pub mod args;
mod commands;
pub mod config;
pub mod rundir;

use std::process::ExitCode;

pub use args::{Cli, Command, Common};
pub use commands::{analysis_summary, run, AnalysisSummary, ABLATIONS};
pub use config::ExperimentConfig;
pub use rundir::RunDir;

/// Exit status for a configuration or input error.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for a failure during computation.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        })
    }
}

impl From<onestep::Error> for CliError {
    fn from(e: onestep::Error) -> Self {
        match e {
            onestep::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
