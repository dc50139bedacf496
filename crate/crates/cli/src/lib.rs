//! Experiment harness for thresholded covariance estimation: configuration,
//! runners, CSV records, checks and SVG plots behind the `opcov` binary.

pub mod app;
pub mod checks;
pub mod config;
pub mod error;
pub mod records;
pub mod runner;
pub mod svg;

pub use config::{ConfigBuilder, Experiment, ExperimentConfig, NRule};
pub use error::{CliError, Result};
