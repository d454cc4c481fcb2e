use std::path::{Path, PathBuf};

use dynpanel_core::dgp::DgpConfig;
use dynpanel_core::estimators::{
    adjusted_ipw, arellano_bond_gmm, fit_fd_2sls, fwl_beta, transformed_2sls, CondMeanEstimator, EstimatorError,
    GmmWeighting, TwoSlsOptions,
};
use dynpanel_core::oracles::{CheckConfig, Verdict};
use dynpanel_core::{EstimatorReport, ObservedPanel};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

fn default_oracle_n() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub dgp: DgpConfig,
    pub estimators: Vec<EstimatorSpec>,
    pub n_units: usize,
    pub replications: usize,
    pub seed: u64,
    /// Size of the world used for causal targets and assumption checks.
    #[serde(default = "default_oracle_n")]
    pub oracle_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerance: TolerancePolicy,
    #[serde(default)]
    pub checks: CheckConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expectations: Vec<Expectation>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema != SCHEMA_VERSION {
            return Err(HarnessError::config(format!(
                "schema {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.replications == 0 {
            return Err(HarnessError::config("replications must be at least 1"));
        }
        if self.n_units == 0 {
            return Err(HarnessError::config("n_units must be at least 1"));
        }
        if self.oracle_n < self.n_units {
            return Err(HarnessError::config(format!(
                "oracle_n = {} is smaller than n_units = {}",
                self.oracle_n, self.n_units
            )));
        }
        if self.estimators.is_empty() {
            return Err(HarnessError::config("at least one estimator is required"));
        }
        let mut labels: Vec<String> = self.estimators.iter().map(|e| e.label()).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(HarnessError::config(format!("duplicate estimator label '{}'", w[0])));
        }
        for e in &self.estimators {
            e.validate(self.dgp.horizon())?;
        }
        self.tolerance.validate()?;
        self.checks.validate()?;
        self.dgp.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Pass/fail rules applied to every estimate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancePolicy {
    /// `|bias| ≤ max(abs_floor, k · MC s.e.)` counts as a match.
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_abs_floor")]
    pub abs_floor: f64,
    /// Coverage counts replications within `coverage_k` sampling s.d. of the target.
    #[serde(default = "default_coverage_k")]
    pub coverage_k: f64,
}

fn default_k() -> f64 {
    3.0
}
fn default_abs_floor() -> f64 {
    0.01
}
fn default_coverage_k() -> f64 {
    4.0
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self { k: default_k(), abs_floor: default_abs_floor(), coverage_k: default_coverage_k() }
    }
}

impl TolerancePolicy {
    fn validate(&self) -> Result<(), HarnessError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.k) && ok(self.abs_floor) && ok(self.coverage_k)) {
            return Err(HarnessError::config("tolerance values must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Oracle quantity an estimate is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetName {
    /// `E[w² τ_2(D_1)] / E[w²]` with `w = E[D_2|Y_0,D_1] − E[D_2|D_1]`.
    ConvexAggregate,
    /// `E[w ΔY_2] / E[w²]` with projection weights.
    #[serde(rename = "plim_2sls")]
    Plim2sls,
    AteTau2OverD1,
    #[serde(rename = "ate_tau2_d1_is_0")]
    AteTau2D1Is0,
    #[serde(rename = "ate_tau2_d1_is_1")]
    AteTau2D1Is1,
    AteTau1,
    BetaStar,
    GammaStar,
}

impl TargetName {
    pub fn label(&self) -> &'static str {
        match self {
            TargetName::ConvexAggregate => "convex_aggregate",
            TargetName::Plim2sls => "plim_2sls",
            TargetName::AteTau2OverD1 => "ate_tau2_over_d1",
            TargetName::AteTau2D1Is0 => "ate_tau2_d1_is_0",
            TargetName::AteTau2D1Is1 => "ate_tau2_d1_is_1",
            TargetName::AteTau1 => "ate_tau1",
            TargetName::BetaStar => "beta_star",
            TargetName::GammaStar => "gamma_star",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorKind {
    #[serde(rename = "fd_2sls")]
    Fd2sls {
        #[serde(default)]
        options: TwoSlsOptions,
    },
    FwlBeta {
        #[serde(default)]
        options: TwoSlsOptions,
    },
    AdjustedIpw {
        #[serde(default)]
        cme: CondMeanEstimator,
    },
    #[serde(rename = "transformed_2sls")]
    Transformed2sls {
        #[serde(default)]
        cme: CondMeanEstimator,
        #[serde(default)]
        options: TwoSlsOptions,
    },
    ArellanoBond {
        #[serde(default = "two_step")]
        weighting: GmmWeighting,
        #[serde(default)]
        options: TwoSlsOptions,
    },
}

fn two_step() -> GmmWeighting {
    GmmWeighting::TwoStep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    #[serde(flatten)]
    pub kind: EstimatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Overrides the default target of the primary estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetName>,
}

/// One estimated number of a fit with the oracle quantity it is scored on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub name: &'static str,
    pub target: TargetName,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { kind, label: None, target: None }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            EstimatorKind::Fd2sls { .. } => "fd_2sls",
            EstimatorKind::FwlBeta { .. } => "fwl_beta",
            EstimatorKind::AdjustedIpw { .. } => "adjusted_ipw",
            EstimatorKind::Transformed2sls { .. } => "transformed_2sls",
            EstimatorKind::ArellanoBond { .. } => "arellano_bond",
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind_name().to_string())
    }

    fn validate(&self, horizon: usize) -> Result<(), HarnessError> {
        match &self.kind {
            EstimatorKind::AdjustedIpw { cme } | EstimatorKind::Transformed2sls { cme, .. } => {
                cme.validate()?;
            }
            EstimatorKind::ArellanoBond { .. } => {}
            _ => {}
        }
        let needs_two = !matches!(self.kind, EstimatorKind::ArellanoBond { .. });
        if needs_two && horizon != 2 {
            return Err(HarnessError::config(format!("{} needs a T = 2 design, got T = {horizon}", self.kind_name())));
        }
        Ok(())
    }

    /// Reported quantities in row order; the first is the primary estimate.
    pub fn quantities(&self) -> Vec<Quantity> {
        let primary = |name, default| Quantity { name, target: self.target.unwrap_or(default) };
        match self.kind {
            EstimatorKind::Fd2sls { .. } | EstimatorKind::FwlBeta { .. } => {
                vec![primary("beta_hat", TargetName::ConvexAggregate)]
            }
            EstimatorKind::AdjustedIpw { .. } | EstimatorKind::Transformed2sls { .. } => {
                vec![primary("mu_tau2_hat", TargetName::AteTau2OverD1)]
            }
            EstimatorKind::ArellanoBond { .. } => vec![
                primary("beta_hat", TargetName::BetaStar),
                Quantity { name: "gamma_hat", target: TargetName::GammaStar },
            ],
        }
    }

    pub fn run(&self, panel: &ObservedPanel) -> Result<EstimatorReport, EstimatorError> {
        let mut report = match &self.kind {
            EstimatorKind::Fd2sls { options } => fit_fd_2sls(panel, options)?.report,
            EstimatorKind::FwlBeta { options } => fwl_beta(panel, options)?.report,
            EstimatorKind::AdjustedIpw { cme } => adjusted_ipw(panel, cme)?.report,
            EstimatorKind::Transformed2sls { cme, options } => transformed_2sls(panel, cme, options)?.report,
            EstimatorKind::ArellanoBond { weighting, options } => arellano_bond_gmm(panel, *weighting, options)?.report,
        };
        if let Some(l) = &self.label {
            report.estimator = l.clone();
        }
        Ok(report)
    }
}

pub fn quantity_value(report: &EstimatorReport, name: &str) -> Option<f64> {
    match name {
        "beta_hat" => report.beta_hat,
        "gamma_hat" => report.gamma_hat,
        "mu_tau2_hat" => report.mu_tau2_hat,
        _ => None,
    }
}

/// Scenario-level claims checked after a run; any failure makes the CLI exit 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Expectation {
    /// The row's bias is within `max(abs_floor, k · MC s.e.)`.
    Matches {
        estimator: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quantity: Option<String>,
    },
    /// The row's bias exceeds `k · MC s.e.` (the estimator targets something else).
    Misses {
        estimator: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quantity: Option<String>,
    },
    Coverage {
        estimator: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quantity: Option<String>,
        min: f64,
    },
    Verdict {
        check: String,
        verdict: Verdict,
    },
    /// Levels and trends forms of every exchangeability check agree.
    TrendsAgree,
    /// Oracle-world projection weights are non-degenerate and their
    /// normalised squares average to one.
    ConvexWeights,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Json { path: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_specs_round_trip() {
        let json = r#"[
            {"estimator": "fd_2sls"},
            {"estimator": "adjusted_ipw", "cme": {"mode": "kernel"}, "label": "ipw_kernel"},
            {"estimator": "arellano_bond", "weighting": "one_step", "target": "beta_star"}
        ]"#;
        let specs: Vec<EstimatorSpec> = serde_json::from_str(json).unwrap();
        assert_eq!(specs[1].label(), "ipw_kernel");
        assert_eq!(specs[2].kind, EstimatorKind::ArellanoBond { weighting: GmmWeighting::OneStep, options: TwoSlsOptions::default() });
        let back: Vec<EstimatorSpec> = serde_json::from_str(&serde_json::to_string(&specs).unwrap()).unwrap();
        assert_eq!(back, specs);
        assert!(serde_json::from_str::<EstimatorSpec>(r#"{"estimator": "ols"}"#).is_err());
    }
}
