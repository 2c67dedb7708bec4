//! Config-driven runner and oracle commands behind the `tss` binary.

pub mod config;
pub mod oracle;
pub mod run;

pub use config::{validate, ExperimentConfig, Manifest, ModelSpec, StateSampler, ValidationReport, SEED_ENV};
pub use run::{run_experiment, EstimateRow, RunResult};
