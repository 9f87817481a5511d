//! Experiment runner for conformalized selective regression.
//!
//! [`runner::run_experiment`] executes the split, train, calibrate, sweep and
//! evaluate pipeline for every configured seed and records the outputs in a
//! manifest. [`report::aggregate`] turns manifests into seed-averaged
//! comparison tables.

pub mod config;
pub mod error;
pub mod report;
pub mod runner;

pub use config::{ConfigLayer, DataSource, ExperimentConfig};
pub use error::{CliError, Result};
pub use runner::{evaluate_seed, run_experiment, RunManifest, SeedResult};
