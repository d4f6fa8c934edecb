//! Reproducible command-line runs of the novelty-detection pipeline:
//! synthetic data generation, training, detection, standalone density
//! fitting and in-memory end-to-end evaluation.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{FeatureConfig, Overrides, RunConfig};
pub use error::CliError;
