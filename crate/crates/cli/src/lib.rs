//! Experiment harness for tempered Gaussian-process sweeps: JSON configs in,
//! deterministic CSV tables, a resolved config and a run log out.

pub mod config;
pub mod error;
pub mod plot;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use run::run_experiment;

/// Thread count override for the worker pool.
pub const THREADS_ENV: &str = "TEMPERED_GP_THREADS";
