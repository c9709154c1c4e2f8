//! Command-line harness: configuration, data, checkpoints and experiment runs.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;

pub use config::{ExperimentConfig, ProblemName};
pub use error::{CliError, CliResult};
