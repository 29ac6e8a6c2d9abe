//! Experiment orchestration for the auction laboratory: dataset generation,
//! training pipelines, evaluation (RPM, CTR, Ψ), reports and the oracle
//! self-checks behind the `aforge` command line.

pub mod checks;
pub mod config;
mod error;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, CheckpointDir, Contender, Experiment, TrainedCga};
pub use metrics::{rpm_ctr, ClickMetrics};
pub use report::{MechanismReport, Report};
