//! Experiment harness for the crossnet toolkit: configuration, replicated
//! training runs, result aggregation and gradient checking.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod report;
pub mod run;

pub use config::{Experiment, ExperimentConfig};
pub use error::CliError;
