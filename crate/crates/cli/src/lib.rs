//! Experiment harness for the FedQS simulator: config parsing, run
//! orchestration, result persistence, and the canned experiment presets
//! behind the `fedqs` command line tool.

pub mod config;
pub mod presets;
pub mod runner;

pub use config::{ExperimentConfig, ModelKind};
pub use runner::{run_experiment, run_once, ExperimentReport};
