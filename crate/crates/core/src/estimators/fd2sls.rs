//! Saturated first-difference 2SLS for `T = 2`:
//! `ΔY_2 = Δθ + γ ΔY_1 + β ΔD_2`, instrumenting `(ΔY_1, ΔD_2)` with the full
//! set of `(Y_0, D_1)` cell dummies. Stage-1 fitted values are cell means.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cells::{CellIndex, CellKey};
use super::{require_horizon, EstimatorError, TwoSlsOptions};
use crate::panel::{first_difference, ObservedPanel};
use crate::report::{EstimatorReport, WeightDiag};
use crate::stats::variance;

/// Stage-1 objects shared by the direct, FWL and transformed estimators.
#[derive(Debug, Clone)]
pub(crate) struct FirstStage {
    pub cells: CellIndex,
    /// `Â_i = E_n[ΔY_1 | Y_0, D_1]`.
    pub a_hat: Vec<f64>,
    /// `B̂_i = E_n[ΔD_2 | Y_0, D_1]`.
    pub b_hat: Vec<f64>,
    pub dy2: Vec<f64>,
    /// Residual of `B̂` on `[1, Â]`, per cell and per unit.
    pub w_cell: Vec<f64>,
    pub w_hat: Vec<f64>,
    /// Centered sum of squares of `Â`.
    pub s_aa: f64,
    pub var_dd2: f64,
    pub mean_sq: f64,
}

impl FirstStage {
    pub fn build(panel: &ObservedPanel, opts: &TwoSlsOptions) -> Result<Self, EstimatorError> {
        require_horizon(panel, "saturated 2SLS")?;
        let diff = first_difference(panel)?;
        let n = panel.n();
        let cells = CellIndex::by_y0_d1(panel);
        if cells.len() > opts.max_cells {
            return Err(EstimatorError::Config(format!(
                "{} (Y0, D1) cells exceed max_cells = {}; Y0 does not look discrete",
                cells.len(),
                opts.max_cells
            )));
        }
        // Every observed Y_0 level must appear with both D_1 values.
        for key in cells.keys() {
            let other = CellKey::new(key.y0(), None, 1 - key.d1());
            if cells.keys().binary_search(&other).is_err() {
                return Err(EstimatorError::Saturation { cell: other.to_string() });
            }
        }
        let dy1 = diff.dy_col(1);
        let dd2 = diff.dd_col(2);
        let a_cell = cells.means(&dy1);
        let b_cell = cells.means(&dd2);
        let counts = cells.counts();
        let nf = n as f64;
        let mean = |v: &[f64]| v.iter().zip(counts).map(|(x, c)| x * *c as f64).sum::<f64>() / nf;
        let (abar, bbar) = (mean(&a_cell), mean(&b_cell));
        let (mut s_aa, mut s_ab) = (0.0, 0.0);
        for ((a, b), c) in a_cell.iter().zip(&b_cell).zip(counts) {
            s_aa += *c as f64 * (a - abar) * (a - abar);
            s_ab += *c as f64 * (a - abar) * (b - bbar);
        }
        let slope = if s_aa > 0.0 { s_ab / s_aa } else { 0.0 };
        let w_cell: Vec<f64> = a_cell.iter().zip(&b_cell).map(|(a, b)| (b - bbar) - slope * (a - abar)).collect();
        let w_hat = cells.expand(&w_cell);
        let mean_sq = w_hat.iter().map(|w| w * w).sum::<f64>() / nf;
        Ok(Self {
            a_hat: cells.expand(&a_cell),
            b_hat: cells.expand(&b_cell),
            dy2: diff.dy_col(2),
            w_cell,
            w_hat,
            s_aa,
            var_dd2: variance(&dd2),
            mean_sq,
            cells,
        })
    }

    pub fn degeneracy_threshold(&self, opts: &TwoSlsOptions) -> f64 {
        (opts.degenerate_rel * self.var_dd2).max(opts.degenerate_abs)
    }

    pub fn check_degenerate(&self, opts: &TwoSlsOptions) -> Result<(), EstimatorError> {
        let threshold = self.degeneracy_threshold(opts);
        if !(self.mean_sq > threshold) {
            return Err(EstimatorError::DegenerateWeights { mean_sq: self.mean_sq, threshold });
        }
        Ok(())
    }

    pub fn weight_diag(&self, opts: &TwoSlsOptions) -> WeightDiag {
        let n = self.w_hat.len() as f64;
        WeightDiag {
            min: self.w_hat.iter().copied().fold(f64::INFINITY, f64::min),
            max: self.w_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            frac_small: self.w_hat.iter().filter(|w| w.abs() < opts.small_weight).count() as f64 / n,
            tolerance: opts.small_weight,
            mean_sq: self.mean_sq,
        }
    }

    /// Stage 2: least squares of `y` on `[1, Â, B̂]`; returns `(γ̂, β̂)`.
    pub fn second_stage(&self, y: &[f64]) -> Result<(f64, f64), EstimatorError> {
        let scale = self.a_hat.iter().map(|a| a * a).sum::<f64>() / self.a_hat.len() as f64;
        if !(self.s_aa > 1e-12 * scale.max(1e-300) * self.a_hat.len() as f64) {
            return Err(EstimatorError::SingularDesign(
                "E[dY1 | Y0, D1] is constant across cells, so gamma is not identified".into(),
            ));
        }
        let n = y.len();
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => self.a_hat[i],
            _ => self.b_hat[i],
        });
        let svd = x.svd(true, true);
        let coef = svd
            .solve(&DVector::from_column_slice(y), 1e-12)
            .map_err(|e| EstimatorError::SingularDesign(e.to_string()))?;
        Ok((coef[1], coef[2]))
    }
}

#[derive(Debug, Clone)]
pub struct TwoSlsFit {
    pub gamma_hat: f64,
    pub beta_hat: f64,
    pub report: EstimatorReport,
}

/// Direct two-stage least squares with cell-mean first stages.
pub fn fit_fd_2sls(panel: &ObservedPanel, opts: &TwoSlsOptions) -> Result<TwoSlsFit, EstimatorError> {
    let fs = FirstStage::build(panel, opts)?;
    fs.check_degenerate(opts)?;
    let (gamma_hat, beta_hat) = fs.second_stage(&fs.dy2)?;
    let mut report = EstimatorReport::new("fd_2sls", panel.n());
    report.gamma_hat = Some(gamma_hat);
    report.beta_hat = Some(beta_hat);
    report.diagnostics.weight = Some(fs.weight_diag(opts));
    report.diagnostics.cells = Some(fs.cells.len());
    Ok(TwoSlsFit { gamma_hat, beta_hat, report })
}

#[derive(Debug, Clone)]
pub struct FwlFit {
    pub beta_hat: f64,
    /// Per-unit `Ŵ_i`.
    pub w_hat: Vec<f64>,
    pub report: EstimatorReport,
}

/// `β̂ = Σ Ŵ_i ΔY_2i / Σ Ŵ_i²` with `Ŵ` the residual of `B̂` on `[1, Â]`.
pub fn fwl_beta(panel: &ObservedPanel, opts: &TwoSlsOptions) -> Result<FwlFit, EstimatorError> {
    let fs = FirstStage::build(panel, opts)?;
    fs.check_degenerate(opts)?;
    let num: f64 = fs.w_hat.iter().zip(&fs.dy2).map(|(w, y)| w * y).sum();
    let den: f64 = fs.w_hat.iter().map(|w| w * w).sum();
    let beta_hat = num / den;
    let mut report = EstimatorReport::new("fwl_beta", panel.n());
    report.beta_hat = Some(beta_hat);
    report.diagnostics.weight = Some(fs.weight_diag(opts));
    report.diagnostics.cells = Some(fs.cells.len());
    Ok(FwlFit { beta_hat, w_hat: fs.w_hat, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCell {
    pub key: CellKey,
    pub count: usize,
    pub w_hat: f64,
    /// `ŵ² / E_n[ŵ²]`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionWeights {
    pub cells: Vec<WeightCell>,
    pub mean_sq: f64,
    pub threshold: f64,
    pub degenerate: bool,
    pub diag: WeightDiag,
}

impl ProjectionWeights {
    /// Sample average of the normalised weights (1 unless degenerate).
    pub fn normalized_mean(&self) -> f64 {
        let n: usize = self.cells.iter().map(|c| c.count).sum();
        self.cells.iter().map(|c| c.count as f64 * c.normalized).sum::<f64>() / n as f64
    }
}

/// Per-cell projection weights and their normalised squares. Degenerate
/// weights are reported, not treated as an error.
pub fn projection_weights(panel: &ObservedPanel, opts: &TwoSlsOptions) -> Result<ProjectionWeights, EstimatorError> {
    let fs = FirstStage::build(panel, opts)?;
    let threshold = fs.degeneracy_threshold(opts);
    let degenerate = !(fs.mean_sq > threshold);
    let cells = fs
        .cells
        .keys()
        .iter()
        .zip(fs.cells.counts())
        .zip(&fs.w_cell)
        .map(|((key, count), w)| WeightCell {
            key: *key,
            count: *count,
            w_hat: *w,
            normalized: if degenerate { 0.0 } else { w * w / fs.mean_sq },
        })
        .collect();
    Ok(ProjectionWeights { cells, mean_sq: fs.mean_sq, threshold, degenerate, diag: fs.weight_diag(opts) })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Units given as `(y0, y1, y2, d1, d2)`.
    fn panel(rows: &[(f64, f64, f64, u8, u8)]) -> ObservedPanel {
        let y = rows.iter().flat_map(|r| [r.0, r.1, r.2]).collect();
        let d = rows.iter().flat_map(|r| [r.3, r.4]).collect();
        ObservedPanel::new(2, y, d).unwrap()
    }

    fn small() -> ObservedPanel {
        panel(&[
            (0.0, 1.0, 2.5, 0, 1),
            (0.0, 0.5, 0.0, 0, 0),
            (0.0, 2.0, 3.0, 1, 1),
            (0.0, 1.5, 1.0, 1, 0),
            (1.0, 1.0, 1.0, 0, 0),
            (1.0, 3.0, 4.5, 0, 1),
            (1.0, 2.5, 2.0, 1, 0),
            (1.0, 4.0, 4.0, 1, 1),
            (1.0, 2.0, 3.5, 1, 1),
            (0.0, 0.0, 0.5, 0, 0),
        ])
    }

    #[test]
    fn empty_cell_is_named() {
        let p = panel(&[(0.0, 1.0, 2.0, 0, 1), (0.0, 1.0, 2.0, 1, 1), (2.0, 1.0, 2.0, 0, 0)]);
        let err = fit_fd_2sls(&p, &TwoSlsOptions::default()).unwrap_err();
        assert!(matches!(&err, EstimatorError::Saturation { cell } if cell == "(Y0=2, D1=1)"), "{err}");
    }

    #[test]
    fn stage_one_is_cell_means_and_weights_are_orthogonal() {
        let p = small();
        let fs = FirstStage::build(&p, &TwoSlsOptions::default()).unwrap();
        // Cell (0, 0) holds units 0, 1, 9: ΔY_1 = 1, 0.5, 0.
        assert!((fs.a_hat[0] - 0.5).abs() < 1e-15);
        // ΔD_2 = D_2 − D_1: units 0, 1, 9 → 1, 0, 0.
        assert!((fs.b_hat[9] - 1.0 / 3.0).abs() < 1e-15);
        let s: f64 = fs.w_hat.iter().sum();
        let sa: f64 = fs.w_hat.iter().zip(&fs.a_hat).map(|(w, a)| w * a).sum();
        assert!(s.abs() < 1e-13 && sa.abs() < 1e-13);
    }

    #[test]
    fn direct_and_fwl_forms_agree() {
        let p = small();
        let opts = TwoSlsOptions::default();
        let a = fit_fd_2sls(&p, &opts).unwrap();
        let b = fwl_beta(&p, &opts).unwrap();
        assert!((a.beta_hat - b.beta_hat).abs() <= 1e-10 * a.beta_hat.abs());
        assert!(a.report.is_finite());
    }

    #[test]
    fn normalized_weights_average_to_one() {
        let w = projection_weights(&small(), &TwoSlsOptions::default()).unwrap();
        assert!(!w.degenerate);
        assert!(w.cells.iter().all(|c| c.normalized >= 0.0));
        assert!((w.normalized_mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn d1_only_assignment_gives_degenerate_weights() {
        // ΔY_1 depends on D_1 only and D_2 = 1 − D_1: Ŵ vanishes identically.
        let rows: Vec<_> = (0..40)
            .map(|i| {
                let y0 = (i % 2) as f64;
                let d1 = ((i / 2) % 2) as u8;
                (y0, y0 + 0.5 + d1 as f64, y0 + (i % 7) as f64, d1, 1 - d1)
            })
            .collect();
        let p = panel(&rows);
        let err = fwl_beta(&p, &TwoSlsOptions::default()).unwrap_err();
        assert!(matches!(err, EstimatorError::DegenerateWeights { .. }), "{err}");
        assert!(fit_fd_2sls(&p, &TwoSlsOptions::default()).is_err());
        assert!(projection_weights(&p, &TwoSlsOptions::default()).unwrap().degenerate);
    }
}
