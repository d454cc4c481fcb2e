//! Adjusted inverse-propensity weighting for `E[τ_2(D_1)]` and its
//! transformed-2SLS twin.

use std::collections::BTreeSet;

use super::cells::CellKey;
use super::cme::{estimate_cond_mean, CondMeanEstimator, CondMeanTarget, OverlapPolicy};
use super::fd2sls::FirstStage;
use super::{require_horizon, EstimatorError, TwoSlsOptions};
use crate::panel::ObservedPanel;
use crate::report::{EstimatorReport, OverlapDiag};

#[derive(Debug, Clone)]
pub struct IpwFit {
    pub mu_tau2_hat: f64,
    /// `(ΔY_2i − M̂_2i) / M̂_1i` per unit; NaN for trimmed units.
    pub summands: Vec<f64>,
    pub report: EstimatorReport,
}

struct Plugins {
    m1: Vec<f64>,
    m2: Vec<f64>,
    below: Vec<usize>,
    diag: OverlapDiag,
}

fn plugins(panel: &ObservedPanel, cme: &CondMeanEstimator) -> Result<Plugins, EstimatorError> {
    require_horizon(panel, "adjusted IPW")?;
    let m1 = estimate_cond_mean(panel, CondMeanTarget::M1, cme)?;
    let below: Vec<usize> = (0..panel.n()).filter(|&i| m1[i] < cme.trimming).collect();
    let diag = OverlapDiag {
        min: m1.iter().copied().fold(f64::INFINITY, f64::min),
        max: m1.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        bound: cme.trimming,
        trimmed: 0,
    };
    let m2 = estimate_cond_mean(panel, CondMeanTarget::M2, cme)?;
    Ok(Plugins { m1, m2, below, diag })
}

fn overlap_error(panel: &ObservedPanel, p: &Plugins) -> EstimatorError {
    let cells: BTreeSet<CellKey> =
        p.below.iter().map(|&i| CellKey::new(panel.y(i, 0), Some(panel.y(i, 1)), panel.d(i, 1))).collect();
    let mut names: Vec<String> = cells.iter().take(20).map(|c| c.to_string()).collect();
    if cells.len() > 20 {
        names.push(format!("... {} more", cells.len() - 20));
    }
    EstimatorError::Overlap { min: p.diag.min, bound: p.diag.bound, cells: names }
}

/// `μ̂ = n⁻¹ Σ (ΔY_2i − M̂_2i) / M̂_1i`.
pub fn adjusted_ipw(panel: &ObservedPanel, cme: &CondMeanEstimator) -> Result<IpwFit, EstimatorError> {
    let mut p = plugins(panel, cme)?;
    if !p.below.is_empty() && cme.overlap_policy == OverlapPolicy::Error {
        return Err(overlap_error(panel, &p));
    }
    let mut summands = Vec::with_capacity(panel.n());
    let (mut sum, mut kept) = (0.0, 0usize);
    for i in 0..panel.n() {
        if p.m1[i] < cme.trimming {
            summands.push(f64::NAN);
            continue;
        }
        let s = (panel.y(i, 2) - panel.y(i, 1) - p.m2[i]) / p.m1[i];
        summands.push(s);
        sum += s;
        kept += 1;
    }
    if kept == 0 {
        return Err(overlap_error(panel, &p));
    }
    p.diag.trimmed = p.below.len();
    let mu = sum / kept as f64;
    let mut report = EstimatorReport::new("adjusted_ipw", panel.n());
    report.mu_tau2_hat = Some(mu);
    report.diagnostics.overlap = Some(p.diag);
    Ok(IpwFit { mu_tau2_hat: mu, summands, report })
}

/// Regress `ΔY_2† = summand_i · E_n[Ŵ²] / Ŵ_i` on the saturated first-stage
/// fitted values and return the slope on the `ΔD_2` fit. Trimming is not
/// applied here: dropping units would change the first stage, so any unit
/// below the bound is an overlap error.
pub fn transformed_2sls(
    panel: &ObservedPanel,
    cme: &CondMeanEstimator,
    opts: &TwoSlsOptions,
) -> Result<IpwFit, EstimatorError> {
    let p = plugins(panel, cme)?;
    if !p.below.is_empty() {
        return Err(overlap_error(panel, &p));
    }
    let fs = FirstStage::build(panel, opts)?;
    fs.check_degenerate(opts)?;
    let floor = cme.weight_floor * fs.mean_sq.sqrt();
    if let Some((unit, w)) = fs.w_hat.iter().enumerate().find(|(_, w)| w.abs() < floor) {
        return Err(EstimatorError::WeightDivision { unit, weight: w.abs(), floor });
    }
    let summands: Vec<f64> = (0..panel.n()).map(|i| (panel.y(i, 2) - panel.y(i, 1) - p.m2[i]) / p.m1[i]).collect();
    let dagger: Vec<f64> = summands.iter().zip(&fs.w_hat).map(|(s, w)| s * fs.mean_sq / w).collect();
    let (gamma, beta) = fs.second_stage(&dagger)?;
    let mut report = EstimatorReport::new("transformed_2sls", panel.n());
    report.mu_tau2_hat = Some(beta);
    report.gamma_hat = Some(gamma);
    report.diagnostics.overlap = Some(p.diag);
    report.diagnostics.weight = Some(fs.weight_diag(opts));
    report.diagnostics.cells = Some(fs.cells.len());
    Ok(IpwFit { mu_tau2_hat: beta, summands, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(rows: &[(f64, f64, f64, u8, u8)]) -> ObservedPanel {
        let y = rows.iter().flat_map(|r| [r.0, r.1, r.2]).collect();
        let d = rows.iter().flat_map(|r| [r.3, r.4]).collect();
        ObservedPanel::new(2, y, d).unwrap()
    }

    /// Every history cell holds equally many treated and untreated units and
    /// `ΔY_2 = 0.5 + 2 D_2` plus a shift shared by both arms, so `M̂_1 = 1/2`
    /// and the summands average to exactly 2.
    fn balanced() -> ObservedPanel {
        let mut rows = Vec::new();
        for (y0, y1, d1) in [(0.0, 1.0, 0u8), (0.0, 2.0, 1), (1.0, 0.5, 0), (1.0, 3.0, 1), (0.0, 0.0, 0), (1.0, 1.0, 1)] {
            let k = (y0 * 2.0 + y1) as usize % 3 + 1;
            for rep in 0..k {
                for d2 in 0..2u8 {
                    let y2 = y1 + 0.5 + 2.0 * d2 as f64 + 0.1 * rep as f64;
                    rows.push((y0, y1, y2, d1, d2));
                }
            }
        }
        panel(&rows)
    }

    #[test]
    fn constant_effect_is_recovered_exactly() {
        let fit = adjusted_ipw(&balanced(), &CondMeanEstimator::cell()).unwrap();
        assert!((fit.mu_tau2_hat - 2.0).abs() < 1e-12);
        let o = fit.report.diagnostics.overlap.unwrap();
        assert_eq!((o.min, o.max, o.trimmed), (0.5, 0.5, 0));
    }

    #[test]
    fn overlap_failure_names_the_cell_or_trims() {
        let mut rows = vec![(0.0, 1.0, 1.0, 0u8, 0u8), (0.0, 1.0, 1.2, 0, 0)];
        rows.extend([(0.0, 2.0, 4.0, 0, 1), (0.0, 2.0, 2.0, 0, 0)]);
        let p = panel(&rows);
        let err = adjusted_ipw(&p, &CondMeanEstimator::cell()).unwrap_err();
        assert!(matches!(&err, EstimatorError::Overlap { cells, .. } if cells == &["(Y0=0, Y1=1, D1=0)"]), "{err}");
        let mut cme = CondMeanEstimator::cell();
        cme.overlap_policy = OverlapPolicy::Trim;
        let fit = adjusted_ipw(&p, &cme).unwrap();
        assert_eq!(fit.report.diagnostics.overlap.unwrap().trimmed, 2);
        assert!((fit.mu_tau2_hat - 2.0).abs() < 1e-12);
        assert!(fit.summands[0].is_nan());
    }

    #[test]
    fn transformed_2sls_matches_ipw() {
        let p = balanced();
        let cme = CondMeanEstimator::cell();
        let a = adjusted_ipw(&p, &cme).unwrap().mu_tau2_hat;
        let b = transformed_2sls(&p, &cme, &TwoSlsOptions::default()).unwrap().mu_tau2_hat;
        assert!((a - b).abs() <= 1e-8 * a.abs(), "{a} vs {b}");
    }
}
