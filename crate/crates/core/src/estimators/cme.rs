//! Plug-in conditional means `M̂_1 = Ê[D_2 | Y_0, Y_1, D_1]` and
//! `M̂_2 = Ê[ΔY_2 | D_2 = 0, Y_0, Y_1, D_1]`.

use serde::{Deserialize, Serialize};

use super::cells::CellIndex;
use super::{require_horizon, EstimatorError};
use crate::panel::ObservedPanel;
use crate::stats::variance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CondMeanMode {
    /// Exact cell means over `(Y_0, Y_1, D_1)`.
    Cell,
    /// Nadaraya–Watson with a product Gaussian kernel over `(Y_0, Y_1)` and
    /// exact matching on `D_1`. Missing bandwidths use `1.06 · sd · n^(-1/5)`.
    Kernel {
        #[serde(default)]
        bandwidths: Option<[f64; 2]>,
    },
}

/// What to do with units whose `M̂_1` falls below the trimming bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    #[default]
    Error,
    Trim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondMeanEstimator {
    #[serde(flatten)]
    pub mode: CondMeanMode,
    #[serde(default = "default_trimming")]
    pub trimming: f64,
    #[serde(default)]
    pub overlap_policy: OverlapPolicy,
    /// Transformed 2SLS refuses `|Ŵ_i| < weight_floor · rms(Ŵ)`.
    #[serde(default = "default_weight_floor")]
    pub weight_floor: f64,
}

fn default_trimming() -> f64 {
    0.01
}

fn default_weight_floor() -> f64 {
    1e-6
}

impl Default for CondMeanEstimator {
    fn default() -> Self {
        Self::cell()
    }
}

impl CondMeanEstimator {
    pub fn cell() -> Self {
        Self {
            mode: CondMeanMode::Cell,
            trimming: default_trimming(),
            overlap_policy: OverlapPolicy::Error,
            weight_floor: default_weight_floor(),
        }
    }

    pub fn kernel(bandwidths: Option<[f64; 2]>) -> Self {
        Self { mode: CondMeanMode::Kernel { bandwidths }, ..Self::cell() }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.trimming > 0.0 && self.trimming < 0.5) {
            return Err(EstimatorError::Config(format!("trimming bound {} must lie in (0, 0.5)", self.trimming)));
        }
        if let CondMeanMode::Kernel { bandwidths: Some(h) } = &self.mode {
            if !h.iter().all(|h| h.is_finite() && *h > 0.0) {
                return Err(EstimatorError::Config(format!("kernel bandwidths {h:?} must be positive")));
            }
        }
        if !(self.weight_floor.is_finite() && self.weight_floor >= 0.0) {
            return Err(EstimatorError::Config("weight_floor must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CondMeanTarget {
    /// `E[D_2 | Y_0, Y_1, D_1]`.
    M1,
    /// `E[ΔY_2 | D_2 = 0, Y_0, Y_1, D_1]`.
    M2,
}

/// Per-unit plug-in values of the requested conditional mean.
pub fn estimate_cond_mean(
    panel: &ObservedPanel,
    target: CondMeanTarget,
    cme: &CondMeanEstimator,
) -> Result<Vec<f64>, EstimatorError> {
    require_horizon(panel, "conditional-mean plug-ins")?;
    cme.validate()?;
    let n = panel.n();
    let (values, mask): (Vec<f64>, Vec<bool>) = match target {
        CondMeanTarget::M1 => ((0..n).map(|i| panel.d(i, 2) as f64).collect(), vec![true; n]),
        CondMeanTarget::M2 => (
            (0..n).map(|i| panel.y(i, 2) - panel.y(i, 1)).collect(),
            (0..n).map(|i| panel.d(i, 2) == 0).collect(),
        ),
    };
    match &cme.mode {
        CondMeanMode::Cell => {
            let cells = CellIndex::by_history(panel);
            let (means, counts) = cells.masked_means(&values, &mask);
            if let Some(c) = counts.iter().position(|&k| k == 0) {
                return Err(EstimatorError::CellSupport { cell: format!("{} with D2=0", cells.keys()[c]) });
            }
            Ok(cells.expand(&means))
        }
        CondMeanMode::Kernel { bandwidths } => {
            let h = match bandwidths {
                Some(h) => *h,
                None => rule_of_thumb(panel)?,
            };
            kernel_means(panel, &values, &mask, h)
        }
    }
}

fn rule_of_thumb(panel: &ObservedPanel) -> Result<[f64; 2], EstimatorError> {
    let n = panel.n();
    let factor = 1.06 * (n as f64).powf(-0.2);
    let mut h = [0.0; 2];
    for (t, ht) in h.iter_mut().enumerate() {
        let col: Vec<f64> = (0..n).map(|i| panel.y(i, t)).collect();
        *ht = factor * variance(&col).sqrt();
        if !(*ht > 0.0) {
            return Err(EstimatorError::Config(format!(
                "rule-of-thumb bandwidth for Y{t} is zero (constant coordinate); supply bandwidths"
            )));
        }
    }
    Ok(h)
}

/// Nadaraya–Watson estimate at every unit. Weights are stabilised by the
/// nearest candidate's squared distance, which leaves the ratio unchanged.
fn kernel_means(panel: &ObservedPanel, values: &[f64], mask: &[bool], h: [f64; 2]) -> Result<Vec<f64>, EstimatorError> {
    let n = panel.n();
    let mut pools: [Vec<(f64, f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for j in 0..n {
        if mask[j] {
            pools[panel.d(j, 1) as usize].push((panel.y(j, 0) / h[0], panel.y(j, 1) / h[1], values[j]));
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut dist = Vec::new();
    for i in 0..n {
        let pool = &pools[panel.d(i, 1) as usize];
        if pool.is_empty() {
            return Err(EstimatorError::CellSupport {
                cell: format!("(Y0={}, Y1={}, D1={}) (no kernel mass)", panel.y(i, 0), panel.y(i, 1), panel.d(i, 1)),
            });
        }
        let (x0, x1) = (panel.y(i, 0) / h[0], panel.y(i, 1) / h[1]);
        dist.clear();
        dist.extend(pool.iter().map(|(a, b, _)| (a - x0).powi(2) + (b - x1).powi(2)));
        let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let (mut num, mut den) = (0.0, 0.0);
        for (d, (_, _, v)) in dist.iter().zip(pool) {
            let k = (-0.5 * (d - dmin)).exp();
            num += k * v;
            den += k;
        }
        out.push(num / den);
    }
    Ok(out)
}
