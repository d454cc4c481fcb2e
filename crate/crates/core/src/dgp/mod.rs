//! Seeded generators of [`PotentialOutcomeWorld`]s.
//!
//! Every generator is a pure function of its configuration, the unit count and
//! a [`StreamKey`]; identical inputs give bit-identical worlds.

mod designer;
mod learning;
mod linear;
mod seqrand;

pub use designer::{
    simulate_designer, AssumptionFlags, CellEffects, ClauseStatus, DesignerSpec, DiscreteDist, LatentTypes,
    PopulationTargets,
};
pub use learning::{simulate_learning, LearningConfig, Xi0Spec};
pub use linear::{simulate_linear_dpdm, AlphaDist, AlphaFamily, EpsDist, LinearDpdmConfig, SelectionRule, Y0Rule};
pub use seqrand::{simulate_seq_randomized, FirstPeriodPropensity, SecondPeriodPropensity, SeqRandConfig};


use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::PanelError;
use crate::rng::StreamKey;
use crate::world::PotentialOutcomeWorld;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inconsistent designer spec: {0}")]
    Spec(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T, DgpError> {
    Err(DgpError::Config(msg.into()))
}

/// Tagged union of all generator configurations, as read from JSON
/// (`{"kind": "linear_dpdm", …}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpConfig {
    LinearDpdm(LinearDpdmConfig),
    Learning(LearningConfig),
    SeqRandomized(SeqRandConfig),
    Designer(DesignerSpec),
}

impl DgpConfig {
    pub fn horizon(&self) -> usize {
        match self {
            DgpConfig::LinearDpdm(c) => c.horizon,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DgpConfig::LinearDpdm(_) => "linear_dpdm",
            DgpConfig::Learning(_) => "learning",
            DgpConfig::SeqRandomized(_) => "seq_randomized",
            DgpConfig::Designer(_) => "designer",
        }
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        match self {
            DgpConfig::LinearDpdm(c) => c.validate(c.horizon),
            DgpConfig::Learning(c) => c.validate(),
            DgpConfig::SeqRandomized(c) => c.validate(),
            DgpConfig::Designer(c) => c.validate().map(|_| ()),
        }
    }
}

/// Dispatch to the generator selected by `cfg`.
pub fn simulate(cfg: &DgpConfig, n: usize, key: StreamKey) -> Result<PotentialOutcomeWorld, DgpError> {
    match cfg {
        DgpConfig::LinearDpdm(c) => simulate_linear_dpdm(c, n, c.horizon, key),
        DgpConfig::Learning(c) => simulate_learning(c, n, key),
        DgpConfig::SeqRandomized(c) => simulate_seq_randomized(c, n, key),
        DgpConfig::Designer(c) => simulate_designer(c, n, key),
    }
}

/// A finite grid for `Y_0` with its probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Y0Dist {
    pub grid: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Default for Y0Dist {
    fn default() -> Self {
        Self { grid: vec![-1.0, 0.0, 1.0], probs: vec![1.0 / 3.0; 3] }
    }
}

impl Y0Dist {
    pub fn validate(&self) -> Result<(), DgpError> {
        validate_probs("y0", &self.grid, &self.probs)
    }

    pub fn draw_index<R: Rng>(&self, rng: &mut R) -> usize {
        draw_index(&self.probs, rng)
    }
}

pub(crate) fn validate_probs(what: &str, values: &[f64], probs: &[f64]) -> Result<(), DgpError> {
    if values.is_empty() || values.len() != probs.len() {
        return config_err(format!("{what}: {} values but {} probabilities", values.len(), probs.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return config_err(format!("{what}: non-finite support point"));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return config_err(format!("{what}: probabilities must lie in [0, 1]"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return config_err(format!("{what}: probabilities sum to {total}"));
    }
    Ok(())
}

pub(crate) fn draw_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[inline]
pub(crate) fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
pub(crate) fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> u8 {
    let u: f64 = rng.random();
    (u < p) as u8
}

/// Bivariate normal law of the arm-specific fixed effects `(α(0), α(1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateNormal {
    pub mean: [f64; 2],
    pub sd: [f64; 2],
    #[serde(default)]
    pub corr: f64,
}

impl BivariateNormal {
    pub fn validate(&self, what: &str) -> Result<(), DgpError> {
        if self.sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return config_err(format!("{what}: invalid mean / sd"));
        }
        if !(-1.0..=1.0).contains(&self.corr) {
            return config_err(format!("{what}: correlation {} outside [-1, 1]", self.corr));
        }
        Ok(())
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let c = self.corr * self.sd[0] * self.sd[1];
        [[self.sd[0] * self.sd[0], c], [c, self.sd[1] * self.sd[1]]]
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        let z0 = std_normal(rng);
        let z1 = std_normal(rng);
        let r = self.corr;
        [
            self.mean[0] + self.sd[0] * z0,
            self.mean[1] + self.sd[1] * (r * z0 + (1.0 - r * r).sqrt() * z1),
        ]
    }
}

/// The parametric outcome family shared by the learning and
/// sequentially-randomised regimes (`T = 2`):
///
/// `Y_1(d_1) = a d_1 + b Y_0 + α(d_1) + ε_1(d_1)`,
/// `Y_2(d_1, d_2) = a d_2 + b Y_1(d_1) + α(d_2) + ε_2(d_2)`,
///
/// with `α` bivariate normal and `ε_t(d)` i.i.d. `N(0, eps_sd²)`, all drawn
/// independently of `Y_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricOutcomes {
    pub effect: f64,
    pub persistence: f64,
    pub alpha: BivariateNormal,
    pub eps_sd: f64,
    #[serde(default)]
    pub y0: Y0Dist,
}

impl Default for ParametricOutcomes {
    fn default() -> Self {
        Self {
            effect: 1.0,
            persistence: 0.5,
            alpha: BivariateNormal { mean: [0.0, 0.0], sd: [1.0, 1.0], corr: 0.5 },
            eps_sd: 0.5,
            y0: Y0Dist::default(),
        }
    }
}

/// One unit's draw from [`ParametricOutcomes`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParametricUnit {
    pub alpha: [f64; 2],
    /// `Y_1(0), Y_1(1)`.
    pub y1: [f64; 2],
    /// `Y_2(00), Y_2(01), Y_2(10), Y_2(11)`.
    pub y2: [f64; 4],
}

impl ParametricOutcomes {
    pub fn validate(&self) -> Result<(), DgpError> {
        self.y0.validate()?;
        self.alpha.validate("alpha")?;
        if !(self.eps_sd.is_finite() && self.eps_sd >= 0.0) {
            return config_err("eps_sd must be a finite non-negative number");
        }
        if !(self.effect.is_finite() && self.persistence.is_finite()) {
            return config_err("effect / persistence must be finite");
        }
        Ok(())
    }

    pub(crate) fn draw_unit<R: Rng>(&self, rng: &mut R, y0: f64) -> ParametricUnit {
        let alpha = self.alpha.draw(rng);
        let mut eps = [[0.0; 2]; 2];
        for row in eps.iter_mut() {
            for e in row.iter_mut() {
                *e = self.eps_sd * std_normal(rng);
            }
        }
        let (a, b) = (self.effect, self.persistence);
        let y1 = [b * y0 + alpha[0] + eps[0][0], a + b * y0 + alpha[1] + eps[0][1]];
        let mut y2 = [0.0; 4];
        for d1 in 0..2 {
            for d2 in 0..2 {
                y2[2 * d1 + d2] = a * d2 as f64 + b * y1[d1] + alpha[d2] + eps[1][d2];
            }
        }
        ParametricUnit { alpha, y1, y2 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_validation() {
        assert!(validate_probs("x", &[0.0, 1.0], &[0.5, 0.5]).is_ok());
        assert!(validate_probs("x", &[0.0, 1.0], &[0.5, 0.6]).is_err());
        assert!(validate_probs("x", &[0.0], &[0.5, 0.5]).is_err());
        assert!(validate_probs("x", &[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn draw_index_respects_zero_mass() {
        let mut rng = StreamKey::new(1, 0).rng();
        for _ in 0..1000 {
            assert_ne!(draw_index(&[0.5, 0.0, 0.5], &mut rng), 1);
        }
    }

    #[test]
    fn dgp_config_json_is_tagged() {
        let cfg = DgpConfig::SeqRandomized(SeqRandConfig::fully_randomized());
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"kind\":\"seq_randomized\""));
        let back: DgpConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
