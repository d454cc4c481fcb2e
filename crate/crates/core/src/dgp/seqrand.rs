//! Sequentially randomised treatments (`T = 2`): `D_1` is drawn from
//! `p1(Y_0)` and `D_2` from `p2(Y_0, Y_1, D_1)`, with potential outcomes from
//! [`ParametricOutcomes`] drawn independently of both randomisation devices.

use serde::{Deserialize, Serialize};

use super::{bernoulli, config_err, DgpError, ParametricOutcomes};
use crate::path::TreatmentPath;
use crate::rng::StreamKey;
use crate::stats::logistic;
use crate::world::{Latent, PotentialOutcomeWorld, DEFAULT_MAX_HORIZON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum FirstPeriodPropensity {
    Constant { p: f64 },
    /// `logistic(intercept + y0 · Y_0)`.
    Logistic { intercept: f64, y0: f64 },
}

impl FirstPeriodPropensity {
    pub fn eval(&self, y0: f64) -> f64 {
        match *self {
            FirstPeriodPropensity::Constant { p } => p,
            FirstPeriodPropensity::Logistic { intercept, y0: b } => logistic(intercept + b * y0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum SecondPeriodPropensity {
    Constant {
        p: f64,
    },
    /// `logistic(intercept + y0 · Y_0 + y1 · Y_1 + d1 · D_1)`.
    Logistic {
        intercept: f64,
        #[serde(default)]
        y0: f64,
        #[serde(default)]
        y1: f64,
        #[serde(default)]
        d1: f64,
    },
}

impl SecondPeriodPropensity {
    pub fn eval(&self, y0: f64, y1: f64, d1: u8) -> f64 {
        match *self {
            SecondPeriodPropensity::Constant { p } => p,
            SecondPeriodPropensity::Logistic { intercept, y0: a, y1: b, d1: c } => {
                logistic(intercept + a * y0 + b * y1 + c * d1 as f64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqRandConfig {
    #[serde(default)]
    pub outcomes: ParametricOutcomes,
    pub p1: FirstPeriodPropensity,
    pub p2: SecondPeriodPropensity,
    /// Declares `p2` constant; only then may it sit on the boundary `{0, 1}`.
    #[serde(default)]
    pub degenerate_p2: bool,
}

impl SeqRandConfig {
    /// Both periods assigned by fair coin flips.
    pub fn fully_randomized() -> Self {
        Self {
            outcomes: ParametricOutcomes::default(),
            p1: FirstPeriodPropensity::Constant { p: 0.5 },
            p2: SecondPeriodPropensity::Constant { p: 0.5 },
            degenerate_p2: true,
        }
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        self.outcomes.validate()?;
        let interior = |p: f64| p > 0.0 && p < 1.0;
        match self.p1 {
            FirstPeriodPropensity::Constant { p } if !interior(p) => {
                return config_err(format!("p1 = {p} must lie strictly inside (0, 1)"))
            }
            FirstPeriodPropensity::Logistic { intercept, y0 } if !(intercept.is_finite() && y0.is_finite()) => {
                return config_err("p1 coefficients must be finite")
            }
            _ => {}
        }
        match self.p2 {
            SecondPeriodPropensity::Constant { p } => {
                let ok = if self.degenerate_p2 { (0.0..=1.0).contains(&p) } else { interior(p) };
                if !ok {
                    return config_err(format!("p2 = {p} outside the allowed range"));
                }
            }
            SecondPeriodPropensity::Logistic { intercept, y0, y1, d1 } => {
                if self.degenerate_p2 {
                    return config_err("degenerate_p2 requires a constant p2");
                }
                if ![intercept, y0, y1, d1].iter().all(|v| v.is_finite()) {
                    return config_err("p2 coefficients must be finite");
                }
            }
        }
        Ok(())
    }
}

pub fn simulate_seq_randomized(
    cfg: &SeqRandConfig,
    n: usize,
    key: impl Into<StreamKey>,
) -> Result<PotentialOutcomeWorld, DgpError> {
    cfg.validate()?;
    if n == 0 {
        return config_err("n must be at least 1");
    }
    let mut rng = key.into().rng();
    let oc = &cfg.outcomes;
    let mut y0s = Vec::with_capacity(n);
    let mut po = Vec::with_capacity(6 * n);
    let mut assigned = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(2 * n);
    let mut latent = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let y0 = oc.y0.grid[oc.y0.draw_index(&mut rng)];
        let unit = oc.draw_unit(&mut rng, y0);
        let p1 = cfg.p1.eval(y0);
        let d1 = bernoulli(&mut rng, p1);
        let y1 = unit.y1[d1 as usize];
        let p2 = cfg.p2.eval(y0, y1, d1);
        let d2 = bernoulli(&mut rng, p2);
        y0s.push(y0);
        po.extend_from_slice(&unit.y1);
        po.extend_from_slice(&unit.y2);
        assigned.push(TreatmentPath::new(&[d1, d2]).expect("binary path"));
        propensity.extend_from_slice(&[p1, p2]);
        latent.extend_from_slice(&unit.alpha);
    }
    Ok(PotentialOutcomeWorld::from_parts(
        2,
        y0s,
        po,
        assigned,
        propensity,
        Latent::new(vec!["alpha0".into(), "alpha1".into()], latent),
        DEFAULT_MAX_HORIZON,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randomized_assignment_matches_propensities() {
        let cfg = SeqRandConfig {
            p2: SecondPeriodPropensity::Logistic { intercept: 0.0, y0: 0.0, y1: 2.0, d1: 0.0 },
            degenerate_p2: false,
            ..SeqRandConfig::fully_randomized()
        };
        let w = simulate_seq_randomized(&cfg, 20_000, 3).unwrap();
        let mut d1 = 0.0;
        for i in 0..w.n() {
            d1 += w.assigned(i).get(1) as f64;
            let y1 = w.outcome_along(i, w.assigned(i), 1);
            assert_eq!(w.propensity(i, 2), logistic(2.0 * y1));
        }
        assert!((d1 / w.n() as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn boundary_propensity_requires_the_degenerate_flag() {
        let mut cfg = SeqRandConfig::fully_randomized();
        cfg.p2 = SecondPeriodPropensity::Constant { p: 1.0 };
        assert!(cfg.validate().is_ok());
        cfg.degenerate_p2 = false;
        assert!(cfg.validate().is_err());
        cfg.p2 = SecondPeriodPropensity::Logistic { intercept: 0.0, y0: 0.0, y1: 1.0, d1: 0.0 };
        assert!(cfg.validate().is_ok());
        cfg.degenerate_p2 = true;
        assert!(cfg.validate().is_err());
        cfg = SeqRandConfig::fully_randomized();
        cfg.p1 = FirstPeriodPropensity::Constant { p: 0.0 };
        assert!(matches!(simulate_seq_randomized(&cfg, 5, 1), Err(DgpError::Config(_))));
    }
}
