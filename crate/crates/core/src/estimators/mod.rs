//! Estimators that read only an [`ObservedPanel`](crate::ObservedPanel).

mod cells;
mod cme;
mod fd2sls;
mod gmm;
mod ipw;

pub use cells::{CellIndex, CellKey, CellRow, CellTable};
pub use cme::{estimate_cond_mean, CondMeanEstimator, CondMeanMode, CondMeanTarget, OverlapPolicy};
pub use fd2sls::{fit_fd_2sls, fwl_beta, projection_weights, FwlFit, ProjectionWeights, TwoSlsFit, WeightCell};
pub use gmm::{arellano_bond_gmm, GmmFit, GmmWeighting};
pub use ipw::{adjusted_ipw, transformed_2sls, IpwFit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorClass;
use crate::panel::PanelError;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("horizon error: {0}")]
    Horizon(String),
    #[error("saturated first stage has an empty cell {cell}")]
    Saturation { cell: String },
    #[error("degenerate projection weights: sample E[w^2] = {mean_sq:.3e} is below the threshold {threshold:.3e}")]
    DegenerateWeights { mean_sq: f64, threshold: f64 },
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("overlap violated: propensity plug-in {min:.4} below bound {bound} in cells {}", cells.join(", "))]
    Overlap { min: f64, bound: f64, cells: Vec<String> },
    #[error("no support for the conditional mean at {cell}")]
    CellSupport { cell: String },
    #[error("weight division: |w| = {weight:.3e} of unit {unit} is below the floor {floor:.3e}")]
    WeightDivision { unit: usize, weight: f64, floor: f64 },
    #[error("ill-conditioned GMM weighting matrix: {0}")]
    Conditioning(String),
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

impl EstimatorError {
    pub fn class(&self) -> ErrorClass {
        match self {
            EstimatorError::Horizon(_) | EstimatorError::Config(_) | EstimatorError::Panel(_) => ErrorClass::Config,
            _ => ErrorClass::Numerical,
        }
    }

    /// Short stable label used when tallying failures.
    pub fn kind(&self) -> &'static str {
        match self {
            EstimatorError::Horizon(_) => "horizon",
            EstimatorError::Saturation { .. } => "saturation",
            EstimatorError::DegenerateWeights { .. } => "degenerate_weights",
            EstimatorError::SingularDesign(_) => "singular_design",
            EstimatorError::Overlap { .. } => "overlap",
            EstimatorError::CellSupport { .. } => "cell_support",
            EstimatorError::WeightDivision { .. } => "weight_division",
            EstimatorError::Conditioning(_) => "conditioning",
            EstimatorError::Config(_) => "config",
            EstimatorError::Panel(_) => "panel",
        }
    }
}

/// Thresholds of the saturated 2SLS pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSlsOptions {
    /// Weights are degenerate when sample `E[ŵ²] ≤ rel · Var(ΔD_2)`.
    #[serde(default = "default_degenerate_rel")]
    pub degenerate_rel: f64,
    /// Floor used when `Var(ΔD_2)` itself is zero.
    #[serde(default = "default_degenerate_abs")]
    pub degenerate_abs: f64,
    /// `|ŵ|` below this counts as small in the diagnostics.
    #[serde(default = "default_small_weight")]
    pub small_weight: f64,
    /// Upper bound on the number of `(Y_0, D_1)` cells; more means `Y_0` is
    /// not discrete enough to saturate.
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
}

fn default_degenerate_rel() -> f64 {
    1e-8
}
fn default_degenerate_abs() -> f64 {
    1e-24
}
fn default_small_weight() -> f64 {
    1e-6
}
fn default_max_cells() -> usize {
    2000
}

impl Default for TwoSlsOptions {
    fn default() -> Self {
        Self {
            degenerate_rel: default_degenerate_rel(),
            degenerate_abs: default_degenerate_abs(),
            small_weight: default_small_weight(),
            max_cells: default_max_cells(),
        }
    }
}

pub(crate) fn require_horizon(panel: &crate::ObservedPanel, what: &str) -> Result<(), EstimatorError> {
    if panel.horizon() != 2 {
        return Err(EstimatorError::Horizon(format!("{what} needs T = 2, got T = {}", panel.horizon())));
    }
    Ok(())
}
