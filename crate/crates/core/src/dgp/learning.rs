//! Forward-looking treatment choice with Bayesian learning about the
//! arm-specific fixed effects, `T = 2`.
//!
//! Outcomes follow [`ParametricOutcomes`]. Each unit starts with a normal
//! prior over `α = (α(0), α(1))` whose covariance is the population one and
//! whose mean for `α(1)` is shifted by a prior shifter `ξ_0`. After choosing
//! `D_1 = d` it observes `Y_1`, i.e. the noisy signal `α(d) + ε_1(d)`, and
//! updates by the conjugate normal rule. Per-period utility is
//! `Y_t − cost · D_t + η_t(D_t)` with i.i.d. Gumbel shocks, so choices are
//! logit in the expected utility difference. Period-1 values include the
//! discounted expected period-2 value, obtained by backward induction over
//! the two-period tree with Gauss–Hermite integration over the signal.

use rand::Rng;
use rand_distr::Gumbel;
use serde::{Deserialize, Serialize};

use super::{config_err, std_normal, DgpError, ParametricOutcomes};
use crate::path::TreatmentPath;
use crate::rng::StreamKey;
use crate::stats::{gauss_hermite, logistic, softplus};
use crate::world::{Latent, PotentialOutcomeWorld, DEFAULT_MAX_HORIZON};

pub const CONJUGATE_BELIEF: &str = "normal_conjugate";

/// Prior shifter `ξ_0 = y0_loading · Y_0 + sd · (ρ z_α + √(1 − ρ²) z)`, where
/// `z_α` is the standardised `α(1)` and `ρ = alpha_corr` is used only when
/// `independent_given_y0` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Xi0Spec {
    pub sd: f64,
    #[serde(default)]
    pub y0_loading: f64,
    pub independent_given_y0: bool,
    #[serde(default)]
    pub alpha_corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    #[serde(default)]
    pub outcomes: ParametricOutcomes,
    pub xi0: Xi0Spec,
    /// Per-period cost of treatment.
    pub cost: f64,
    /// Scale of the Gumbel choice shocks.
    pub eta_scale: f64,
    pub discount: f64,
    #[serde(default = "default_belief")]
    pub belief: String,
    #[serde(default = "default_quadrature")]
    pub quadrature_order: usize,
}

fn default_belief() -> String {
    CONJUGATE_BELIEF.to_string()
}

fn default_quadrature() -> usize {
    32
}

impl LearningConfig {
    pub fn validate(&self) -> Result<(), DgpError> {
        if self.belief != CONJUGATE_BELIEF {
            return Err(DgpError::Unsupported(format!(
                "belief family {:?}; only {CONJUGATE_BELIEF:?} is implemented",
                self.belief
            )));
        }
        self.outcomes.validate()?;
        if !(self.eta_scale.is_finite() && self.eta_scale > 0.0) {
            return config_err("eta_scale must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return config_err("discount must lie in [0, 1)");
        }
        if !self.cost.is_finite() {
            return config_err("cost must be finite");
        }
        let xi = &self.xi0;
        if !(xi.sd.is_finite() && xi.sd >= 0.0 && xi.y0_loading.is_finite()) {
            return config_err("xi0: invalid sd / y0_loading");
        }
        if !(-1.0..=1.0).contains(&xi.alpha_corr) {
            return config_err("xi0.alpha_corr must lie in [-1, 1]");
        }
        if self.quadrature_order == 0 || self.quadrature_order > 200 {
            return config_err("quadrature_order must be in 1..=200");
        }
        Ok(())
    }
}

/// Normal belief over `(α(0), α(1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Belief {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Belief {
    /// Gain vector for a signal `α(d) + noise` with noise variance `noise_var`.
    fn gain(&self, d: usize, noise_var: f64) -> [f64; 2] {
        let s = self.cov[d][d] + noise_var;
        if s <= 0.0 {
            return [0.0; 2];
        }
        [self.cov[0][d] / s, self.cov[1][d] / s]
    }

    /// Conjugate update after observing `signal = α(d) + ε`, `ε ~ N(0, noise_var)`.
    pub fn update(&self, d: usize, signal: f64, noise_var: f64) -> Belief {
        let k = self.gain(d, noise_var);
        let innov = signal - self.mean[d];
        let mut cov = self.cov;
        let col = [self.cov[0][d], self.cov[1][d]];
        for a in 0..2 {
            for b in 0..2 {
                cov[a][b] -= k[a] * col[b];
            }
        }
        Belief { mean: [self.mean[0] + k[0] * innov, self.mean[1] + k[1] * innov], cov }
    }
}

struct Chooser<'a> {
    cfg: &'a LearningConfig,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Chooser<'_> {
    fn noise_var(&self) -> f64 {
        self.cfg.outcomes.eps_sd * self.cfg.outcomes.eps_sd
    }

    /// Expected utility gain of treating in period 2 under belief `b`.
    fn period2_gap(&self, b: &Belief) -> f64 {
        self.cfg.outcomes.effect + b.mean[1] - b.mean[0] - self.cfg.cost
    }

    /// Expected period-1 utility gap (treat minus not) including the
    /// discounted continuation value, up to the common Gumbel constant.
    fn period1_gap(&self, y0: f64, prior: &Belief) -> f64 {
        let oc = &self.cfg.outcomes;
        let s = self.cfg.eta_scale;
        let mut value = [0.0; 2];
        for (d, v) in value.iter_mut().enumerate() {
            let ey1 = oc.effect * d as f64 + oc.persistence * y0 + prior.mean[d];
            let sd_signal = (prior.cov[d][d] + self.noise_var()).sqrt();
            let k = prior.gain(d, self.noise_var());
            // E[Y_2(d, 0) | info_2] = b·Y_1 + m'_0 is linear in the signal.
            let base = oc.persistence * ey1 + prior.mean[0];
            let option: f64 = self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(z, w)| {
                    let innov = sd_signal * z;
                    let m = [prior.mean[0] + k[0] * innov, prior.mean[1] + k[1] * innov];
                    let gap = oc.effect + m[1] - m[0] - self.cfg.cost;
                    w * s * softplus(gap / s)
                })
                .sum();
            *v = ey1 - self.cfg.cost * d as f64 + self.cfg.discount * (base + option);
        }
        value[1] - value[0]
    }
}

pub fn simulate_learning(
    cfg: &LearningConfig,
    n: usize,
    key: impl Into<StreamKey>,
) -> Result<PotentialOutcomeWorld, DgpError> {
    cfg.validate()?;
    if n == 0 {
        return config_err("n must be at least 1");
    }
    let (nodes, weights) = gauss_hermite(cfg.quadrature_order);
    let chooser = Chooser { cfg, nodes, weights };
    let gumbel = Gumbel::new(0.0, cfg.eta_scale).map_err(|e| DgpError::Config(e.to_string()))?;
    let oc = &cfg.outcomes;
    let noise_var = chooser.noise_var();
    let cov = oc.alpha.covariance();
    let xi = &cfg.xi0;
    let rho = if xi.independent_given_y0 { 0.0 } else { xi.alpha_corr };

    let mut rng = key.into().rng();
    let mut y0s = Vec::with_capacity(n);
    let mut po = Vec::with_capacity(6 * n);
    let mut assigned = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(2 * n);
    let mut latent = Vec::with_capacity(LATENT_NAMES.len() * n);
    for _ in 0..n {
        let y0 = oc.y0.grid[oc.y0.draw_index(&mut rng)];
        let unit = oc.draw_unit(&mut rng, y0);
        let z_alpha = if oc.alpha.sd[1] > 0.0 { (unit.alpha[1] - oc.alpha.mean[1]) / oc.alpha.sd[1] } else { 0.0 };
        let xi0 = xi.y0_loading * y0 + xi.sd * (rho * z_alpha + (1.0 - rho * rho).sqrt() * std_normal(&mut rng));
        let eta: [f64; 4] = std::array::from_fn(|_| rng.sample(gumbel));

        let prior = Belief { mean: [oc.alpha.mean[0], oc.alpha.mean[1] + xi0], cov };
        let gap1 = chooser.period1_gap(y0, &prior);
        let d1 = (gap1 + eta[1] - eta[0] > 0.0) as u8;
        let y1 = unit.y1[d1 as usize];
        let signal = y1 - oc.effect * d1 as f64 - oc.persistence * y0;
        let post = prior.update(d1 as usize, signal, noise_var);
        let gap2 = chooser.period2_gap(&post);
        let d2 = (gap2 + eta[3] - eta[2] > 0.0) as u8;

        y0s.push(y0);
        po.extend_from_slice(&unit.y1);
        po.extend_from_slice(&unit.y2);
        assigned.push(TreatmentPath::new(&[d1, d2]).expect("binary path"));
        propensity.extend_from_slice(&[logistic(gap1 / cfg.eta_scale), logistic(gap2 / cfg.eta_scale)]);
        latent.extend_from_slice(&[
            unit.alpha[0],
            unit.alpha[1],
            xi0,
            eta[0],
            eta[1],
            eta[2],
            eta[3],
            prior.mean[0],
            prior.mean[1],
            post.mean[0],
            post.mean[1],
        ]);
    }
    Ok(PotentialOutcomeWorld::from_parts(
        2,
        y0s,
        po,
        assigned,
        propensity,
        Latent::new(LATENT_NAMES.iter().map(|s| s.to_string()).collect(), latent),
        DEFAULT_MAX_HORIZON,
    )?)
}

const LATENT_NAMES: [&str; 11] = [
    "alpha0", "alpha1", "xi0", "eta1_0", "eta1_1", "eta2_0", "eta2_1", "psi1_m0", "psi1_m1", "psi2_m0", "psi2_m1",
];

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn config(independent: bool) -> LearningConfig {
        LearningConfig {
            outcomes: ParametricOutcomes::default(),
            xi0: Xi0Spec { sd: 1.0, y0_loading: 0.3, independent_given_y0: independent, alpha_corr: 0.8 },
            cost: 0.5,
            eta_scale: 0.5,
            discount: 0.9,
            belief: default_belief(),
            quadrature_order: 32,
        }
    }

    #[test]
    fn conjugate_update_matches_bivariate_normal_conditioning() {
        let b = Belief { mean: [0.2, -0.1], cov: [[1.0, 0.4], [0.4, 2.0]] };
        let post = b.update(1, 1.5, 0.5);
        // Condition (α0, α1, s = α1 + ε) jointly normal on s.
        let var_s = 2.0 + 0.5;
        let m0 = 0.2 + 0.4 / var_s * (1.5 + 0.1);
        let m1 = -0.1 + 2.0 / var_s * (1.5 + 0.1);
        assert!((post.mean[0] - m0).abs() < 1e-14 && (post.mean[1] - m1).abs() < 1e-14);
        assert!((post.cov[0][0] - (1.0 - 0.16 / var_s)).abs() < 1e-14);
        assert!((post.cov[1][1] - (2.0 - 4.0 / var_s)).abs() < 1e-14);
        assert!((post.cov[0][1] - post.cov[1][0]).abs() < 1e-15);
    }

    #[test]
    fn continuation_value_matches_monte_carlo() {
        let cfg = config(true);
        let (nodes, weights) = gauss_hermite(32);
        let ch = Chooser { cfg: &cfg, nodes, weights };
        let prior = Belief { mean: [0.0, 0.3], cov: cfg.outcomes.alpha.covariance() };
        let nv = ch.noise_var();
        // Rebuild the option value for d = 0 by brute-force simulation of the signal.
        let mut rng = StreamKey::new(5, 0).rng();
        let draws = 400_000;
        let mut acc = [0.0; 2];
        for (d, a) in acc.iter_mut().enumerate() {
            let sd = (prior.cov[d][d] + nv).sqrt();
            let mut sum = 0.0;
            for _ in 0..draws {
                let signal = prior.mean[d] + sd * std_normal(&mut rng);
                let post = prior.update(d, signal, nv);
                let y1 = cfg.outcomes.effect * d as f64 + cfg.outcomes.persistence * 0.0 + signal;
                let v2 = cfg.outcomes.persistence * y1
                    + post.mean[0]
                    + cfg.eta_scale * softplus(ch.period2_gap(&post) / cfg.eta_scale);
                sum += v2;
            }
            let ey1 = cfg.outcomes.effect * d as f64 + prior.mean[d];
            *a = ey1 - cfg.cost * d as f64 + cfg.discount * sum / draws as f64;
        }
        let gap = ch.period1_gap(0.0, &prior);
        assert!((gap - (acc[1] - acc[0])).abs() < 0.01, "{gap} vs {}", acc[1] - acc[0]);
    }

    #[test]
    fn huge_shock_scale_gives_coin_flips() {
        let mut cfg = config(true);
        cfg.eta_scale = 1e6;
        let w = simulate_learning(&cfg, 40_000, 2).unwrap();
        let share = (0..w.n()).map(|i| w.assigned(i).get(2) as f64).sum::<f64>() / w.n() as f64;
        assert!((share - 0.5).abs() < 0.015);
        for i in 0..100 {
            assert!((w.propensity(i, 1) - 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn unsupported_belief_family_is_rejected() {
        let mut cfg = config(true);
        cfg.belief = "particle".into();
        assert!(matches!(simulate_learning(&cfg, 10, 1), Err(DgpError::Unsupported(_))));
        let mut cfg = config(true);
        cfg.discount = 1.0;
        assert!(matches!(cfg.validate(), Err(DgpError::Config(_))));
    }

    #[test]
    fn choices_respond_to_observed_history() {
        let w = simulate_learning(&config(true), 50_000, 8).unwrap();
        // Among D_1 = 0 units, a high Y_1 signals a high α(0) and lowers the
        // appeal of switching to treatment.
        let (mut hi, mut lo) = ((0.0, 0.0), (0.0, 0.0));
        for i in 0..w.n() {
            let p = w.assigned(i);
            if p.get(1) == 0 && w.y0(i) == 0.0 {
                let y1 = w.outcome_along(i, p, 1);
                let cell = if y1 > 0.0 { &mut hi } else { &mut lo };
                cell.0 += p.get(2) as f64;
                cell.1 += 1.0;
            }
        }
        assert!(hi.0 / hi.1 < lo.0 / lo.1 - 0.05);
    }
}
