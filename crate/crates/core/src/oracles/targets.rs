use std::collections::BTreeMap;

use super::OracleError;
use crate::path::TreatmentPath;
use crate::report::CausalTargets;
use crate::world::PotentialOutcomeWorld;

/// Above this many `(Y_0, D_1)` cells `Y_0` is treated as continuous and the
/// cell-based targets are left empty.
const MAX_TARGET_CELLS: usize = 5000;

/// Per-unit effects and trends of a `T = 2` world.
struct UnitEffects {
    tau1: f64,
    tau2: [f64; 2],
    delta1: f64,
    delta2: [f64; 2],
}

fn unit_effects(world: &PotentialOutcomeWorld, i: usize) -> UnitEffects {
    let p = |bits: &[u8]| TreatmentPath::new(bits).expect("binary path");
    let y = |bits: &[u8]| world.outcome(i, p(bits));
    UnitEffects {
        tau1: y(&[1]) - y(&[0]),
        tau2: [y(&[0, 1]) - y(&[0, 0]), y(&[1, 1]) - y(&[1, 0])],
        delta1: y(&[0]) - world.y0(i),
        delta2: [y(&[0, 0]) - y(&[0]), y(&[1, 0]) - y(&[1])],
    }
}

fn require_two_periods(world: &PotentialOutcomeWorld) -> Result<(), OracleError> {
    if world.horizon() != 2 {
        return Err(OracleError::Horizon(format!("causal targets need T = 2, got T = {}", world.horizon())));
    }
    Ok(())
}

/// The two summands of `Σ w_i ΔY_2i / Σ w_i²` after substituting
/// `ΔY_2 = δ_2(D_1) + D_2 τ_2(D_1)` with each unit's true effects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionTerms {
    pub te_term: f64,
    pub trend_term: f64,
}

/// Decompose a weighted slope `Σ w_i ΔY_2i / Σ w_i²` using the world's
/// counterfactuals; `w` is indexed by unit.
pub fn weighted_decomposition(world: &PotentialOutcomeWorld, w: &[f64]) -> Result<DecompositionTerms, OracleError> {
    require_two_periods(world)?;
    if w.len() != world.n() {
        return Err(OracleError::Config(format!("{} weights for {} units", w.len(), world.n())));
    }
    let den: f64 = w.iter().map(|w| w * w).sum();
    let (mut te, mut tr) = (0.0, 0.0);
    for (i, wi) in w.iter().enumerate() {
        let e = unit_effects(world, i);
        let path = world.assigned(i);
        let d1 = path.get(1) as usize;
        te += wi * path.get(2) as f64 * e.tau2[d1];
        tr += wi * e.delta2[d1];
    }
    Ok(DecompositionTerms { te_term: te / den, trend_term: tr / den })
}

/// Exact averages over the world's units plus the weight-based aggregates,
/// using the generator's own period-2 propensities as `E[D_2 | ·]`.
pub fn causal_targets(world: &PotentialOutcomeWorld) -> Result<CausalTargets, OracleError> {
    require_two_periods(world)?;
    let n = world.n();
    let nf = n as f64;
    let mut acc = [0.0f64; 7];
    let mut tau2_realized = Vec::with_capacity(n);
    for i in 0..n {
        let e = unit_effects(world, i);
        let d1 = world.assigned(i).get(1) as usize;
        for (a, v) in acc.iter_mut().zip([e.tau1, e.tau2[0], e.tau2[1], e.tau2[d1], e.delta1, e.delta2[0], e.delta2[1]]) {
            *a += v;
        }
        tau2_realized.push(e.tau2[d1]);
    }
    let m: Vec<f64> = acc.iter().map(|a| a / nf).collect();
    let mut out = CausalTargets {
        n,
        ate_tau1: m[0],
        ate_tau2_given_d1: (m[1], m[2]),
        ate_tau2_over_d1: m[3],
        trend_means: (m[4], m[5], m[6]),
        convex_aggregate: None,
        plim_te_term: None,
        plim_trend_term: None,
        plim_direct: None,
    };

    // (Y_0, D_1) cells: count, Σ propensity, Σ ΔY_1.
    let mut cells: BTreeMap<(u64, u8), [f64; 3]> = BTreeMap::new();
    for i in 0..n {
        let path = world.assigned(i);
        let dy1 = world.outcome_along(i, path, 1) - world.y0(i);
        let c = cells.entry(((world.y0(i) + 0.0).to_bits(), path.get(1))).or_default();
        c[0] += 1.0;
        c[1] += world.propensity(i, 2);
        c[2] += dy1;
    }
    if cells.len() > MAX_TARGET_CELLS {
        return Ok(out);
    }
    let mut by_d1 = [[0.0f64; 2]; 2];
    for ((_, d1), c) in &cells {
        by_d1[*d1 as usize][0] += c[0];
        by_d1[*d1 as usize][1] += c[1];
    }
    let e_d2_d1 = by_d1.map(|[cnt, s]| if cnt > 0.0 { s / cnt } else { 0.0 });

    let key = |i: usize| ((world.y0(i) + 0.0).to_bits(), world.assigned(i).get(1));
    let w_simple: Vec<f64> = (0..n)
        .map(|i| {
            let c = &cells[&key(i)];
            c[1] / c[0] - e_d2_d1[world.assigned(i).get(1) as usize]
        })
        .collect();
    let ew2: f64 = w_simple.iter().map(|w| w * w).sum();
    if ew2 > 1e-14 * nf {
        out.convex_aggregate =
            Some(w_simple.iter().zip(&tau2_realized).map(|(w, t)| w * w * t).sum::<f64>() / ew2);
    }

    // Projection of E[ΔD_2 | Y_0, D_1] on [1, E[ΔY_1 | Y_0, D_1]], unit-weighted.
    let cell_ab = |c: &[f64; 3], d1: u8| (c[2] / c[0], c[1] / c[0] - d1 as f64);
    let (mut sa, mut sb) = (0.0, 0.0);
    for ((_, d1), c) in &cells {
        let (a, b) = cell_ab(c, *d1);
        sa += c[0] * a;
        sb += c[0] * b;
    }
    let (abar, bbar) = (sa / nf, sb / nf);
    let (mut saa, mut sab) = (0.0, 0.0);
    for ((_, d1), c) in &cells {
        let (a, b) = cell_ab(c, *d1);
        saa += c[0] * (a - abar) * (a - abar);
        sab += c[0] * (a - abar) * (b - bbar);
    }
    if saa <= 1e-14 * nf {
        return Ok(out);
    }
    let slope = sab / saa;
    let w_proj: Vec<f64> = (0..n)
        .map(|i| {
            let (k, d1) = key(i);
            let (a, b) = cell_ab(&cells[&(k, d1)], d1);
            (b - bbar) - slope * (a - abar)
        })
        .collect();
    let ew2: f64 = w_proj.iter().map(|w| w * w).sum();
    if ew2 > 1e-14 * nf {
        let terms = weighted_decomposition(world, &w_proj)?;
        out.plim_te_term = Some(terms.te_term);
        out.plim_trend_term = Some(terms.trend_term);
        let direct: f64 = (0..n)
            .map(|i| {
                let path = world.assigned(i);
                w_proj[i] * (world.outcome_along(i, path, 2) - world.outcome_along(i, path, 1))
            })
            .sum();
        out.plim_direct = Some(direct / ew2);
    }
    Ok(out)
}
