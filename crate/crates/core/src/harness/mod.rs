//! Experiment execution: configuration, the two inference phases, resumable
//! persistence, and report emission.

pub mod config;
pub mod report;
mod runner;

pub use config::{interpolate_env, BackendChoice, BenchmarkSpec, RunConfig, RunMeta};
pub use runner::{report_only, resume_run, run_experiment, run_phases, PhaseMask, RunOutcome};

use crate::backend::BackendError;
use crate::metrics::MetricsError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config hash mismatch: run was created with {expected}, directory now has {found}; refusing to resume")]
    ConfigHashMismatch { expected: String, found: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run incomplete: {missing} cells still missing after execution")]
    Incomplete { missing: usize },
    #[error("{0}")]
    Other(String),
}
