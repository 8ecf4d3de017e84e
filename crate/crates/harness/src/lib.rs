//! Experiment orchestration for thinned mean-field Langevin dynamics:
//! configuration, cost accounting, CSV run records and aggregation.

pub mod aggregate;
pub mod config;
pub mod cost;
pub mod error;
pub mod record;
pub mod run;

pub use config::{Experiment, ExperimentConfig, Overrides};
pub use cost::{cost, Method};
pub use error::{HarnessError, Result};
pub use record::RunRecord;
pub use run::{run_experiment, run_experiment_to, run_seed, run_to_records, RunSummary};
