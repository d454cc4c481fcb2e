//! Config-driven Monte Carlo experiments over `dynpanel-core`: one oracle
//! world for targets and assumption verdicts, many replication worlds for the
//! estimators, and deterministic aggregate reports.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod scenarios;

pub use config::{EstimatorKind, EstimatorSpec, ExperimentConfig, Expectation, TargetName, TolerancePolicy};
pub use error::HarnessError;
pub use experiment::{run_experiment, write_outputs, EstimateRow, ExperimentOutput, ExperimentReport};
