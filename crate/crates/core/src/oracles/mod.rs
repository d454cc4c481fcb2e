//! Ground truth from the complete counterfactual record of a
//! [`PotentialOutcomeWorld`](crate::PotentialOutcomeWorld): causal targets,
//! limit decompositions and empirical checks of the identifying assumptions.

mod checks;
mod decomposition;
mod targets;

pub use checks::{
    check_ab_moments, check_full_se_period1, check_parallel_trends, check_sequential_exchangeability,
    check_trend_equivalence, AlphaConditioning, AssumptionVerdict, CellContrast, CheckConfig, TrendEquivalence,
    Verdict,
};
pub use decomposition::{audit_unit_decomposition, DecompositionAudit};
pub use targets::{causal_targets, weighted_decomposition, DecompositionTerms};

use thiserror::Error;

use crate::error::ErrorClass;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("horizon error: {0}")]
    Horizon(String),
    #[error("check not applicable: {0}")]
    NotApplicable(String),
    #[error("invalid check configuration: {0}")]
    Config(String),
}

impl OracleError {
    pub fn class(&self) -> ErrorClass {
        ErrorClass::Config
    }
}
