//! Training loop, experiment sweeps and reporting on top of `ewc-core`.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod plot;
pub mod report;
pub mod train;

pub use config::ExperimentConfig;
pub use data::Dataset;
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentOutcome, RunSpec};
pub use train::{train, EpochMetrics, RunRecord};
