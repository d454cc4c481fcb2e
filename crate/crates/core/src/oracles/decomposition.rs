//! Per-unit audit of `ΔY_t = δ_t(D^{t−1}) + D_t τ_t(D^{t−1})`, with the
//! observed outcomes taken from the realized panel and `δ`, `τ` from the
//! counterfactual record.

use serde::{Deserialize, Serialize};

use crate::panel::{realize_observed, ObservedPanel, PanelError};
use crate::world::PotentialOutcomeWorld;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionAudit {
    /// Unit-periods checked.
    pub checked: usize,
    /// Unit-periods where the identity fails in exact arithmetic.
    pub mismatches: usize,
    /// Largest `|ΔY − (δ + Dτ)|` when the right side is evaluated in `f64`.
    pub max_float_gap: f64,
}

/// Sum `a + b` as `(s, e)` with `s + e = a + b` exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// True when the exact real sum of `terms` is zero. Keeps a nonoverlapping
/// expansion of the running sum, so no rounding is ever discarded.
fn sums_to_zero(terms: &[f64]) -> bool {
    let mut expansion: Vec<f64> = Vec::with_capacity(terms.len());
    for &t in terms {
        let mut q = t;
        for e in expansion.iter_mut() {
            let (s, err) = two_sum(q, *e);
            *e = err;
            q = s;
        }
        expansion.push(q);
    }
    expansion.iter().all(|&e| e == 0.0)
}

/// Audits every unit and period of `world` against `panel` (pass `None` to
/// realize the panel from the world's own assignment).
pub fn audit_unit_decomposition(
    world: &PotentialOutcomeWorld,
    panel: Option<&ObservedPanel>,
) -> Result<DecompositionAudit, PanelError> {
    let owned;
    let panel = match panel {
        Some(p) => p,
        None => {
            owned = realize_observed(world)?;
            &owned
        }
    };
    let mut audit = DecompositionAudit { checked: 0, mismatches: 0, max_float_gap: 0.0 };
    for i in 0..world.n() {
        let path = panel.path(i);
        for t in 1..=world.horizon() {
            let before = path.prefix(t - 1);
            let (y_t, y_prev) = (panel.y(i, t), panel.y(i, t - 1));
            let (untreated, treated) = (world.outcome(i, before.extend(0)), world.outcome(i, before.extend(1)));
            let lagged = world.outcome(i, before);
            let d = path.get(t) as f64;
            let delta = untreated - lagged;
            let tau = treated - untreated;
            audit.max_float_gap = audit.max_float_gap.max(((y_t - y_prev) - (delta + d * tau)).abs());
            // ΔY − δ − Dτ as a signed sum of stored reals.
            let terms = [y_t, -y_prev, -untreated, lagged, -d * treated, d * untreated];
            if !sums_to_zero(&terms) {
                audit.mismatches += 1;
            }
            audit.checked += 1;
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_zero_test_sees_through_rounding() {
        let (b, c) = (0.7, 1e16 + 2.0);
        // c − b rounds, so the rounded difference does not cancel exactly.
        assert!(!sums_to_zero(&[c, -b, -(c - b)]));
        assert!(sums_to_zero(&[c, -b, b, -c]));
        assert!(sums_to_zero(&[1e300, 1.0, -1e300, -1.0]));
        assert!(!sums_to_zero(&[1.0, 1e-300]));
        assert!(sums_to_zero(&[]));
    }

    #[test]
    fn mismatched_panel_is_flagged() {
        let spec = crate::dgp::tests_support::homogeneous_within_d1();
        let world = crate::dgp::simulate_designer(&spec, 300, crate::StreamKey::new(3, 0)).unwrap();
        let clean = audit_unit_decomposition(&world, None).unwrap();
        assert_eq!(clean.mismatches, 0);
        assert_eq!(clean.checked, 600);
        let real = realize_observed(&world).unwrap();
        let mut y: Vec<f64> = (0..world.n()).flat_map(|i| real.outcomes(i).to_vec()).collect();
        y[2] += 1e-12;
        let d = (0..world.n()).flat_map(|i| (1..=2).map(move |t| (i, t))).map(|(i, t)| real.d(i, t)).collect();
        let bad = ObservedPanel::new(2, y, d).unwrap();
        assert_eq!(audit_unit_decomposition(&world, Some(&bad)).unwrap().mismatches, 1);
    }
}
