use serde::{Deserialize, Serialize};

/// Population-level causal quantities of a `T = 2` world, computed by the
/// oracles from the complete counterfactual record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalTargets {
    pub n: usize,
    /// `E[τ_1]`.
    pub ate_tau1: f64,
    /// `(E[τ_2(0)], E[τ_2(1)])`.
    pub ate_tau2_given_d1: (f64, f64),
    /// `E[τ_2(D_1)]`, averaging each unit's effect at its realised `D_1`.
    pub ate_tau2_over_d1: f64,
    /// `(E[δ_1], E[δ_2(0)], E[δ_2(1)])`.
    pub trend_means: (f64, f64, f64),
    /// `E[w² τ_2(D_1)] / E[w²]` with `w = E[D_2|Y_0,D_1] − E[D_2|D_1]` built
    /// from the generator's own propensities. `None` when `Y_0` is not
    /// discrete or the weights are degenerate.
    pub convex_aggregate: Option<f64>,
    /// Treatment-effect summand of the 2SLS limit, `E[w D_2 τ_2(D_1)] / E[w²]`,
    /// with `w` the projection error of `E[ΔD_2|Y_0,D_1]` on
    /// `[1, E[ΔY_1|Y_0,D_1]]`.
    pub plim_te_term: Option<f64>,
    /// Trend summand of the 2SLS limit, `E[w δ_2(D_1)] / E[w²]`.
    pub plim_trend_term: Option<f64>,
    /// `E[w ΔY_2] / E[w²]` evaluated directly on the realised panel with the
    /// same `w`.
    pub plim_direct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightDiag {
    pub min: f64,
    pub max: f64,
    /// Share of units with `|ŵ| < tolerance`.
    pub frac_small: f64,
    pub tolerance: f64,
    /// Sample `E[ŵ²]`.
    pub mean_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapDiag {
    /// Smallest and largest plug-in propensity `M̂_1`.
    pub min: f64,
    pub max: f64,
    pub bound: f64,
    /// Units dropped because `M̂_1` fell below `bound` (trimming policy only).
    pub trimmed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_units: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightDiag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<OverlapDiag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_stat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_instruments: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighting: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
}

/// What every estimator returns. Serialises as
/// `{"beta_hat":…, "gamma_hat":…, "mu_tau2_hat":…, "diagnostics":{…}, …}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: String,
    pub beta_hat: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub mu_tau2_hat: Option<f64>,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl EstimatorReport {
    pub fn new(estimator: impl Into<String>, n_units: usize) -> Self {
        Self {
            estimator: estimator.into(),
            diagnostics: Diagnostics { n_units, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn with_provenance(mut self, seed: impl Into<String>, digest: impl Into<String>) -> Self {
        self.seed = Some(seed.into());
        self.config_digest = Some(digest.into());
        self
    }

    /// True when every reported number is finite.
    pub fn is_finite(&self) -> bool {
        let opt = |v: Option<f64>| v.is_none_or(f64::is_finite);
        opt(self.beta_hat)
            && opt(self.gamma_hat)
            && opt(self.mu_tau2_hat)
            && opt(self.diagnostics.j_stat)
            && self
                .diagnostics
                .weight
                .is_none_or(|w| [w.min, w.max, w.mean_sq].iter().all(|v| v.is_finite()))
            && self.diagnostics.overlap.is_none_or(|o| o.min.is_finite() && o.max.is_finite())
    }
}
