//! Experiment runner behind the `coxq` command line: configuration, the six
//! subcommands and their reports.

pub mod config;
pub mod report;
pub mod runner;
pub mod stats;

use coxq_core::CoxqError;

pub use config::{ExperimentConfig, Kind, Level, Start, Tolerances};
pub use report::{Criterion, Report, SCHEMA_VERSION};
pub use runner::{run, Artifact, RunOutput};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CRITERION_FAILED: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] CoxqError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        EXIT_CONFIG_ERROR
    }
}

/// Exit status of a completed run.
pub fn exit_code(report: &Report) -> i32 {
    if report.passed {
        EXIT_PASS
    } else {
        EXIT_CRITERION_FAILED
    }
}
