//! Library surface of the `iuq` experiment runner, exposed so integration
//! tests can drive experiments without shelling out.

pub mod config;
pub mod experiments;
pub mod figures;
pub mod report;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{resolve, run_experiment, Outcome, Resolved};
