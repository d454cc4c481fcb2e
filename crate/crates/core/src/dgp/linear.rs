//! Linear, homogeneous AR(1) model for potential outcomes:
//!
//! `Y_t(d^t) = β* d_t + γ* Y_{t−1}(d^{t−1}) + θ*_t + α*_i + ε*_t(d_t)`.
//!
//! The structural errors `ε*_t(d)` are drawn independently of treatments,
//! of `Y_0`, of `α*` and (unless `ar_rho ≠ 0`) of their own past, so strong
//! structural sequential exogeneity holds by construction. Treatment
//! propensities may load on `α*`, which breaks unconditional exchangeability
//! while leaving it intact once `α*` is conditioned on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bernoulli, config_err, std_normal, DgpError};
use crate::path::TreatmentPath;
use crate::rng::StreamKey;
use crate::stats::logistic;
use crate::world::{outcomes_per_unit, Latent, PotentialOutcomeWorld, DEFAULT_MAX_HORIZON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaFamily {
    Normal,
    /// `mean ± sd` with probability one half each.
    TwoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaDist {
    pub family: AlphaFamily,
    pub mean: f64,
    pub sd: f64,
}

impl AlphaDist {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.family {
            AlphaFamily::Normal => self.mean + self.sd * std_normal(rng),
            AlphaFamily::TwoPoint => {
                if rng.random::<bool>() {
                    self.mean + self.sd
                } else {
                    self.mean - self.sd
                }
            }
        }
    }
}

/// Arm-specific error scales. `ar_rho ≠ 0` makes each arm's errors a
/// stationary AR(1) across periods, which violates the no-serial-correlation
/// moment on purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsDist {
    pub sd: [f64; 2],
    #[serde(default)]
    pub ar_rho: f64,
}

/// `Y_0` is the grid point nearest to `alpha_loading · α* + noise_sd · z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Y0Rule {
    pub grid: Vec<f64>,
    #[serde(default)]
    pub alpha_loading: f64,
    #[serde(default)]
    pub noise_sd: f64,
}

impl Y0Rule {
    fn map(&self, latent: f64) -> f64 {
        let mut best = self.grid[0];
        for &g in &self.grid[1..] {
            if (g - latent).abs() < (best - latent).abs() {
                best = g;
            }
        }
        best
    }
}

/// `Pr{D_t = 1} = logistic(intercept + y_lag·Y_{t−1} + d_lag·D_{t−1} + alpha·α*)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub y_lag: f64,
    #[serde(default)]
    pub d_lag: f64,
    #[serde(default)]
    pub alpha: f64,
}

impl SelectionRule {
    fn propensity(&self, y_prev: f64, d_prev: u8, alpha: f64) -> f64 {
        logistic(self.intercept + self.y_lag * y_prev + self.d_lag * d_prev as f64 + self.alpha * alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDpdmConfig {
    pub horizon: usize,
    pub beta_star: f64,
    pub gamma_star: f64,
    /// `θ*_1 … θ*_T`.
    pub theta_star: Vec<f64>,
    pub alpha: AlphaDist,
    pub eps: EpsDist,
    pub y0: Y0Rule,
    pub selection: SelectionRule,
    /// Permit `|γ*| ≥ 1`.
    #[serde(default)]
    pub allow_nonstationary: bool,
}

impl LinearDpdmConfig {
    pub fn validate(&self, horizon: usize) -> Result<(), DgpError> {
        if horizon < 2 {
            return config_err(format!("linear DPDM needs T >= 2, got {horizon}"));
        }
        if horizon > DEFAULT_MAX_HORIZON {
            return config_err(format!("horizon {horizon} exceeds {DEFAULT_MAX_HORIZON}"));
        }
        if self.theta_star.len() != horizon {
            return config_err(format!("theta_star has {} entries for horizon {horizon}", self.theta_star.len()));
        }
        if !self.allow_nonstationary && self.gamma_star.abs() >= 1.0 {
            return config_err(format!("|gamma_star| = {} >= 1 (set allow_nonstationary)", self.gamma_star.abs()));
        }
        let finite = [self.beta_star, self.gamma_star, self.alpha.mean, self.alpha.sd, self.eps.ar_rho]
            .iter()
            .chain(&self.theta_star)
            .chain(&self.eps.sd)
            .all(|v| v.is_finite());
        if !finite {
            return config_err("non-finite parameter");
        }
        if self.alpha.sd < 0.0 || self.eps.sd.iter().any(|s| *s < 0.0) || self.y0.noise_sd < 0.0 {
            return config_err("standard deviations must be non-negative");
        }
        if self.eps.ar_rho.abs() >= 1.0 {
            return config_err("eps.ar_rho must lie in (-1, 1)");
        }
        if self.y0.grid.is_empty() || self.y0.grid.iter().any(|g| !g.is_finite()) {
            return config_err("y0 grid must be non-empty and finite");
        }
        Ok(())
    }

    /// Latent column name of `ε*_t(d)`.
    pub fn eps_name(t: usize, d: u8) -> String {
        format!("eps{t}_{d}")
    }
}

pub fn simulate_linear_dpdm(
    cfg: &LinearDpdmConfig,
    n: usize,
    horizon: usize,
    key: impl Into<StreamKey>,
) -> Result<PotentialOutcomeWorld, DgpError> {
    cfg.validate(horizon)?;
    if n == 0 {
        return config_err("n must be at least 1");
    }
    let mut rng = key.into().rng();
    let stride = outcomes_per_unit(horizon);
    let width = 1 + 2 * horizon;
    let mut y0 = Vec::with_capacity(n);
    let mut po = vec![0.0; n * stride];
    let mut assigned = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(n * horizon);
    let mut latent = Vec::with_capacity(n * width);
    let rho = cfg.eps.ar_rho;
    let innov = (1.0 - rho * rho).sqrt();
    let mut eps = vec![[0.0f64; 2]; horizon + 1];

    for i in 0..n {
        let alpha = cfg.alpha.draw(&mut rng);
        let y_init = cfg.y0.map(cfg.y0.alpha_loading * alpha + cfg.y0.noise_sd * std_normal(&mut rng));
        for t in 1..=horizon {
            for d in 0..2 {
                let z = cfg.eps.sd[d] * std_normal(&mut rng);
                eps[t][d] = if t == 1 { z } else { rho * eps[t - 1][d] + innov * z };
            }
        }

        let row = &mut po[i * stride..(i + 1) * stride];
        for t in 1..=horizon {
            let base = (1usize << t) - 2;
            let parent_base = (1usize << (t - 1)).saturating_sub(2);
            for code in 0..(1usize << t) {
                let d_t = code & 1;
                let lag = if t == 1 { y_init } else { row[parent_base + (code >> 1)] };
                row[base + code] =
                    cfg.beta_star * d_t as f64 + cfg.gamma_star * lag + cfg.theta_star[t - 1] + alpha + eps[t][d_t];
            }
        }

        let mut path = TreatmentPath::EMPTY;
        let mut y_prev = y_init;
        for t in 1..=horizon {
            let p = cfg.selection.propensity(y_prev, path.get(t - 1), alpha);
            path = path.extend(bernoulli(&mut rng, p));
            propensity.push(p);
            y_prev = row[(1usize << t) - 2 + path.code() as usize];
        }

        y0.push(y_init);
        assigned.push(path);
        latent.push(alpha);
        for e in &eps[1..] {
            latent.extend_from_slice(e);
        }
    }

    let mut names = vec!["alpha".to_string()];
    for t in 1..=horizon {
        for d in 0..2u8 {
            names.push(LinearDpdmConfig::eps_name(t, d));
        }
    }
    Ok(PotentialOutcomeWorld::from_parts(
        horizon,
        y0,
        po,
        assigned,
        propensity,
        Latent::new(names, latent),
        DEFAULT_MAX_HORIZON,
    )?)
}
