//! Free-form `T = 2` worlds built from explicit effect tables, used to switch
//! individual identifying assumptions on and off.
//!
//! Each unit has a discrete `Y_0`, a discrete latent type `u` (whose law may
//! depend on `Y_0`) and a discrete period-1 shock. Potential outcomes are
//!
//! * `Y_1(0) = Y_0 + δ_1(y0, u) + shock`, `Y_1(1) = Y_1(0) + τ_1(y0, u)`,
//! * `Y_2(d_1, d_2) = Y_1(d_1) + δ_2(d_1; y0, u) + d_2 τ_2(d_1; y0, u) + e(d_2)`,
//!
//! with `e(d_2)` Gaussian noise independent of everything. Treatment
//! propensities come from per-cell tables with optional logit-scale loadings
//! on `u` (which breaks exchangeability) and on `Y_1 − Y_0` (which does not).
//! Because every random element except `e` is discrete, all population
//! moments are computed exactly by enumeration in [`DesignerSpec::population`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{bernoulli, config_err, draw_index, std_normal, validate_probs, DgpError, Y0Dist};
use crate::path::TreatmentPath;
use crate::rng::StreamKey;
use crate::stats::{logistic, logit};
use crate::world::{Latent, PotentialOutcomeWorld, DEFAULT_MAX_HORIZON};

const CLAUSE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn point(v: f64) -> Self {
        Self { values: vec![v], probs: vec![1.0] }
    }
}

/// Latent type support and its law given each `Y_0` grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTypes {
    pub values: Vec<f64>,
    /// `probs[y0][u]`.
    pub probs: Vec<Vec<f64>>,
}

/// Effects of one `(Y_0, u)` cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CellEffects {
    pub delta1: f64,
    pub tau1: f64,
    /// `δ_2(0), δ_2(1)`.
    pub delta2: [f64; 2],
    /// `τ_2(0), τ_2(1)`.
    pub tau2: [f64; 2],
}

/// Requested status of each clause: `Some(true)` must hold, `Some(false)`
/// must fail, `None` is not checked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    /// Mean sequential exchangeability in both periods.
    #[serde(default)]
    pub mean_se: Option<bool>,
    /// Distributional exchangeability of `D_1` given `Y_0`.
    #[serde(default)]
    pub full_se_period1: Option<bool>,
    /// `E[δ_1 | Y_0]` constant.
    #[serde(default)]
    pub invar_trend_1: Option<bool>,
    /// `E[δ_2(d_1) | Y_0]` constant for each `d_1`.
    #[serde(default)]
    pub invar_trend_2: Option<bool>,
    /// `E[τ_1 | Y_0]` constant and non-zero.
    #[serde(default)]
    pub invar_te_1: Option<bool>,
    /// `E[τ_2(d_1) | Y_0, Y_1(d_1')]` constant for all `d_1, d_1'`.
    #[serde(default)]
    pub invar_te_2: Option<bool>,
    /// `E[D_2 | Y_0, Y_1, D_1]` strictly inside `(0, 1)` on every reachable cell.
    #[serde(default)]
    pub overlap: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignerSpec {
    #[serde(default)]
    pub y0: Y0Dist,
    pub types: LatentTypes,
    /// `effects[y0][u]`.
    pub effects: Vec<Vec<CellEffects>>,
    pub y1_shock: DiscreteDist,
    #[serde(default)]
    pub y2_noise_sd: f64,
    /// `Pr{D_1 = 1 | Y_0}` per grid point, before the `u` loading.
    pub e1: Vec<f64>,
    #[serde(default)]
    pub e1_u_coef: f64,
    /// `Pr{D_2 = 1 | Y_0, D_1}` per grid point and `D_1`, before loadings.
    pub e2: Vec<[f64; 2]>,
    /// Logit-scale loading of the period-2 propensity on `Y_1 − Y_0`.
    #[serde(default)]
    pub e2_y1_coef: f64,
    #[serde(default)]
    pub e2_u_coef: f64,
    #[serde(default)]
    pub flags: AssumptionFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseStatus {
    pub name: String,
    pub holds: bool,
    /// Largest violation of the clause's invariance (0 when it holds exactly).
    pub max_gap: f64,
}

/// One `(Y_0, D_1)` cell of the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationCell {
    pub y0: f64,
    pub d1: u8,
    pub prob: f64,
    /// `E[D_2 | Y_0, D_1]`.
    pub e_d2: f64,
    /// `E[ΔY_1 | Y_0, D_1]`.
    pub mean_dy1: f64,
    /// `E[τ_2(D_1) | Y_0, D_1]`.
    pub mean_tau2: f64,
    /// `E[D_2 | Y_0, D_1] − E[D_2 | D_1]`.
    pub w_simplified: f64,
    /// Residual of `E[ΔD_2 | Y_0, D_1]` projected on `[1, E[ΔY_1 | Y_0, D_1]]`.
    pub w_projection: f64,
}

/// Exact population moments of a designer world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTargets {
    pub ate_tau1: f64,
    pub ate_tau2_given_d1: (f64, f64),
    pub ate_tau2_over_d1: f64,
    pub trend_means: (f64, f64, f64),
    pub prob_d1: f64,
    pub cells: Vec<PopulationCell>,
    /// `E[w² τ_2(D_1)] / E[w²]` with the simplified weights.
    pub convex_target: Option<f64>,
    /// `E[w D_2 τ_2(D_1)] / E[w²]` with projection weights.
    pub plim_te_term: Option<f64>,
    /// `E[w δ_2(D_1)] / E[w²]` with projection weights.
    pub plim_trend_term: Option<f64>,
    pub clauses: Vec<ClauseStatus>,
}

impl PopulationTargets {
    pub fn clause(&self, name: &str) -> Option<&ClauseStatus> {
        self.clauses.iter().find(|c| c.name == name)
    }

    /// 2SLS probability limit `E[w ΔY_2] / E[w²]`.
    pub fn plim(&self) -> Option<f64> {
        Some(self.plim_te_term? + self.plim_trend_term?)
    }
}

/// One atom of the discrete law of `(Y_0, u, shock, D_1, D_2)`.
struct Atom {
    y0i: usize,
    ui: usize,
    si: usize,
    d1: u8,
    d2: u8,
    prob: f64,
}

impl DesignerSpec {
    fn n_y0(&self) -> usize {
        self.y0.grid.len()
    }

    fn effect(&self, y0i: usize, ui: usize) -> &CellEffects {
        &self.effects[y0i][ui]
    }

    /// `Y_1(d_1)` for the given cell, shock and arm. Shared by simulation and
    /// enumeration so that equal atoms give bit-identical values.
    fn y1_value(&self, y0i: usize, ui: usize, si: usize, d1: u8) -> f64 {
        let e = self.effect(y0i, ui);
        let y10 = self.y0.grid[y0i] + e.delta1 + self.y1_shock.values[si];
        if d1 == 1 {
            y10 + e.tau1
        } else {
            y10
        }
    }

    /// `E[Y_2(d_1, d_2) | y0, u, shock]`.
    fn y2_mean(&self, y0i: usize, ui: usize, si: usize, d1: u8, d2: u8) -> f64 {
        let e = self.effect(y0i, ui);
        let k = d1 as usize;
        self.y1_value(y0i, ui, si, d1) + e.delta2[k] + d2 as f64 * e.tau2[k]
    }

    fn p1(&self, y0i: usize, ui: usize) -> f64 {
        let base = self.e1[y0i];
        if self.e1_u_coef == 0.0 {
            base
        } else {
            logistic(logit(base) + self.e1_u_coef * self.types.values[ui])
        }
    }

    fn p2(&self, y0i: usize, ui: usize, d1: u8, y1: f64) -> f64 {
        let base = self.e2[y0i][d1 as usize];
        if self.e2_u_coef == 0.0 && self.e2_y1_coef == 0.0 {
            base
        } else {
            let x = self.e2_y1_coef * (y1 - self.y0.grid[y0i]) + self.e2_u_coef * self.types.values[ui];
            logistic(logit(base) + x)
        }
    }

    fn check_shape(&self) -> Result<(), DgpError> {
        self.y0.validate()?;
        let ny = self.n_y0();
        if self.types.probs.len() != ny || self.effects.len() != ny || self.e1.len() != ny || self.e2.len() != ny {
            return config_err(format!("designer tables must have one row per Y_0 grid point ({ny})"));
        }
        for (k, row) in self.types.probs.iter().enumerate() {
            validate_probs(&format!("types[{k}]"), &self.types.values, row)?;
        }
        if self.effects.iter().any(|row| row.len() != self.types.values.len()) {
            return config_err("effects rows must have one entry per latent type");
        }
        let finite = self.effects.iter().flatten().all(|e| {
            [e.delta1, e.tau1, e.delta2[0], e.delta2[1], e.tau2[0], e.tau2[1]].iter().all(|v| v.is_finite())
        });
        if !finite {
            return config_err("non-finite effect");
        }
        validate_probs("y1_shock", &self.y1_shock.values, &self.y1_shock.probs)?;
        if !(self.y2_noise_sd.is_finite() && self.y2_noise_sd >= 0.0) {
            return config_err("y2_noise_sd must be finite and non-negative");
        }
        for c in [self.e1_u_coef, self.e2_u_coef, self.e2_y1_coef] {
            if !c.is_finite() {
                return config_err("non-finite propensity loading");
            }
        }
        let in_unit = |p: &f64| (0.0..=1.0).contains(p);
        if !self.e1.iter().all(in_unit) || !self.e2.iter().flatten().all(in_unit) {
            return config_err("propensities must lie in [0, 1]");
        }
        let interior = |p: &f64| *p > 0.0 && *p < 1.0;
        if self.e1_u_coef != 0.0 && !self.e1.iter().all(interior) {
            return config_err("a u loading on e1 needs interior base propensities");
        }
        if (self.e2_u_coef != 0.0 || self.e2_y1_coef != 0.0) && !self.e2.iter().flatten().all(interior) {
            return config_err("loadings on e2 need interior base propensities");
        }
        Ok(())
    }

    fn atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        for y0i in 0..self.n_y0() {
            let py = self.y0.probs[y0i];
            for ui in 0..self.types.values.len() {
                let pu = py * self.types.probs[y0i][ui];
                for si in 0..self.y1_shock.values.len() {
                    let ps = pu * self.y1_shock.probs[si];
                    if ps == 0.0 {
                        continue;
                    }
                    let p1 = self.p1(y0i, ui);
                    for d1 in 0..2u8 {
                        let pd1 = if d1 == 1 { p1 } else { 1.0 - p1 };
                        let p2 = self.p2(y0i, ui, d1, self.y1_value(y0i, ui, si, d1));
                        for d2 in 0..2u8 {
                            let pd2 = if d2 == 1 { p2 } else { 1.0 - p2 };
                            let prob = ps * pd1 * pd2;
                            if prob > 0.0 {
                                out.push(Atom { y0i, ui, si, d1, d2, prob });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Validate the configuration, enumerate its population and check every requested
    /// flag against the computed clause status.
    pub fn validate(&self) -> Result<PopulationTargets, DgpError> {
        let pop = self.population()?;
        let flags = self.flags;
        let wanted = [
            ("mean_se", flags.mean_se),
            ("full_se_period1", flags.full_se_period1),
            ("invar_trend_1", flags.invar_trend_1),
            ("invar_trend_2", flags.invar_trend_2),
            ("invar_te_1", flags.invar_te_1),
            ("invar_te_2", flags.invar_te_2),
            ("overlap", flags.overlap),
        ];
        for (name, want) in wanted {
            if let Some(want) = want {
                let status = pop.clause(name).expect("every flag has a clause");
                if status.holds != want {
                    return Err(DgpError::Spec(format!(
                        "{name} flagged {} but the configured world makes it {} (gap {:.3e})",
                        if want { "on" } else { "off" },
                        if status.holds { "hold" } else { "fail" },
                        status.max_gap
                    )));
                }
            }
        }
        Ok(pop)
    }

    /// Exact population moments by enumeration.
    pub fn population(&self) -> Result<PopulationTargets, DgpError> {
        self.check_shape()?;
        let atoms = self.atoms();
        let ny = self.n_y0();

        let mut tau1 = 0.0;
        let mut tau2 = [0.0; 2];
        let mut tau2_d1 = 0.0;
        let mut trends = [0.0; 3];
        let mut prob_d1 = 0.0;
        // Per (y0, d1): prob, Σ p·D2, Σ p·ΔY1, Σ p·τ2(D1).
        let mut cell = vec![[[0.0f64; 4]; 2]; ny];
        for a in &atoms {
            let e = self.effect(a.y0i, a.ui);
            let k = a.d1 as usize;
            tau1 += a.prob * e.tau1;
            tau2[0] += a.prob * e.tau2[0];
            tau2[1] += a.prob * e.tau2[1];
            tau2_d1 += a.prob * e.tau2[k];
            trends[0] += a.prob * (e.delta1 + self.y1_shock.values[a.si]);
            trends[1] += a.prob * e.delta2[0];
            trends[2] += a.prob * e.delta2[1];
            prob_d1 += a.prob * a.d1 as f64;
            let dy1 = self.y1_value(a.y0i, a.ui, a.si, a.d1) - self.y0.grid[a.y0i];
            let c = &mut cell[a.y0i][k];
            c[0] += a.prob;
            c[1] += a.prob * a.d2 as f64;
            c[2] += a.prob * dy1;
            c[3] += a.prob * e.tau2[k];
        }

        let mut e_d2_given_d1 = [0.0; 2];
        for k in 0..2 {
            let (mass, d2): (f64, f64) = cell.iter().map(|c| (c[k][0], c[k][1])).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            e_d2_given_d1[k] = if mass > 0.0 { d2 / mass } else { 0.0 };
        }

        // Weighted projection of E[ΔD_2 | Y_0, D_1] = E[D_2 | ·] − D_1 on [1, E[ΔY_1 | ·]].
        let mut cells = Vec::new();
        for (y0i, row) in cell.iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                if c[0] > 0.0 {
                    cells.push(PopulationCell {
                        y0: self.y0.grid[y0i],
                        d1: k as u8,
                        prob: c[0],
                        e_d2: c[1] / c[0],
                        mean_dy1: c[2] / c[0],
                        mean_tau2: c[3] / c[0],
                        w_simplified: c[1] / c[0] - e_d2_given_d1[k],
                        w_projection: 0.0,
                    });
                }
            }
        }
        let (mut sa, mut sb, mut saa, mut sab) = (0.0, 0.0, 0.0, 0.0);
        for c in &cells {
            let b = c.e_d2 - c.d1 as f64;
            sa += c.prob * c.mean_dy1;
            sb += c.prob * b;
            saa += c.prob * c.mean_dy1 * c.mean_dy1;
            sab += c.prob * c.mean_dy1 * b;
        }
        let var_a = saa - sa * sa;
        let slope = if var_a > 1e-14 { (sab - sa * sb) / var_a } else { 0.0 };
        for c in cells.iter_mut() {
            c.w_projection = (c.e_d2 - c.d1 as f64) - sb - slope * (c.mean_dy1 - sa);
        }
        let index = |y0i: usize, d1: u8| {
            cells.iter().position(|c| c.y0 == self.y0.grid[y0i] && c.d1 == d1).expect("atom cell exists")
        };

        let ew2_simple: f64 = cells.iter().map(|c| c.prob * c.w_simplified * c.w_simplified).sum();
        let convex_target = (ew2_simple > 1e-14)
            .then(|| cells.iter().map(|c| c.prob * c.w_simplified.powi(2) * c.mean_tau2).sum::<f64>() / ew2_simple);

        let ew2: f64 = cells.iter().map(|c| c.prob * c.w_projection * c.w_projection).sum();
        let (mut te, mut tr) = (0.0, 0.0);
        for a in &atoms {
            let w = cells[index(a.y0i, a.d1)].w_projection;
            let e = self.effect(a.y0i, a.ui);
            let k = a.d1 as usize;
            te += a.prob * w * a.d2 as f64 * e.tau2[k];
            tr += a.prob * w * e.delta2[k];
        }
        let (plim_te_term, plim_trend_term) = if ew2 > 1e-14 && var_a > 1e-14 {
            (Some(te / ew2), Some(tr / ew2))
        } else {
            (None, None)
        };

        let clauses = self.clauses(&atoms);
        Ok(PopulationTargets {
            ate_tau1: tau1,
            ate_tau2_given_d1: (tau2[0], tau2[1]),
            ate_tau2_over_d1: tau2_d1,
            trend_means: (trends[0], trends[1], trends[2]),
            prob_d1,
            cells,
            convex_target,
            plim_te_term,
            plim_trend_term,
            clauses,
        })
    }

    fn clauses(&self, atoms: &[Atom]) -> Vec<ClauseStatus> {
        // Accumulates (mass, Σ p·x) per key and reports the spread of the
        // conditional means across keys sharing the same group.
        #[derive(Default)]
        struct Groups(BTreeMap<(Vec<u64>, Vec<u64>), (f64, f64)>);
        impl Groups {
            fn add(&mut self, group: Vec<u64>, key: Vec<u64>, p: f64, x: f64) {
                let e = self.0.entry((group, key)).or_default();
                e.0 += p;
                e.1 += p * x;
            }
            fn spread(&self) -> f64 {
                let mut by_group: BTreeMap<&Vec<u64>, (f64, f64)> = BTreeMap::new();
                for ((g, _), (m, s)) in &self.0 {
                    let v = s / m;
                    let e = by_group.entry(g).or_insert((f64::INFINITY, f64::NEG_INFINITY));
                    e.0 = e.0.min(v);
                    e.1 = e.1.max(v);
                }
                by_group.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max)
            }
        }
        let status = |name: &str, gap: f64| ClauseStatus { name: name.into(), holds: gap <= CLAUSE_TOL, max_gap: gap };
        let bits = |x: f64| x.to_bits();
        let mut out = Vec::new();

        // Each marginal statistic is grouped by a constant and keyed by Y_0.
        let mut trend1 = Groups::default();
        let mut trend2 = Groups::default();
        let mut te1 = Groups::default();
        let mut te2 = Groups::default();
        for a in atoms {
            let e = self.effect(a.y0i, a.ui);
            let y0 = vec![a.y0i as u64];
            trend1.add(vec![], y0.clone(), a.prob, e.delta1 + self.y1_shock.values[a.si]);
            te1.add(vec![], y0.clone(), a.prob, e.tau1);
            for k in 0..2u8 {
                trend2.add(vec![k as u64], y0.clone(), a.prob, e.delta2[k as usize]);
                for kp in 0..2u8 {
                    let y1 = self.y1_value(a.y0i, a.ui, a.si, kp);
                    te2.add(vec![k as u64, kp as u64], vec![a.y0i as u64, bits(y1)], a.prob, e.tau2[k as usize]);
                }
            }
        }
        out.push(status("invar_trend_1", trend1.spread()));
        out.push(status("invar_trend_2", trend2.spread()));
        let mean_tau1: f64 = atoms.iter().map(|a| a.prob * self.effect(a.y0i, a.ui).tau1).sum();
        let te1_gap = if mean_tau1.abs() <= CLAUSE_TOL { f64::INFINITY } else { te1.spread() };
        out.push(status("invar_te_1", te1_gap));
        out.push(status("invar_te_2", te2.spread()));

        // Mean exchangeability: period 1 groups by (Y_0, path), keys by D_1;
        // period 2 groups by (Y_0, Y_1, D_1, d_2), keys by D_2.
        let mut se = Groups::default();
        let mut full1: BTreeMap<(usize, u8), BTreeMap<Vec<u64>, f64>> = BTreeMap::new();
        let mut overlap_gap = 0.0f64;
        let mut m1: BTreeMap<(usize, u64, u8), (f64, f64)> = BTreeMap::new();
        for a in atoms {
            let y0 = a.y0i as u64;
            for d1 in 0..2u8 {
                se.add(vec![0, y0, d1 as u64], vec![a.d1 as u64], a.prob, self.y1_value(a.y0i, a.ui, a.si, d1));
                for d2 in 0..2u8 {
                    se.add(
                        vec![1, y0, d1 as u64, d2 as u64],
                        vec![a.d1 as u64],
                        a.prob,
                        self.y2_mean(a.y0i, a.ui, a.si, d1, d2),
                    );
                }
            }
            let y1 = bits(self.y1_value(a.y0i, a.ui, a.si, a.d1));
            for d2 in 0..2u8 {
                se.add(
                    vec![2, y0, y1, a.d1 as u64, d2 as u64],
                    vec![a.d2 as u64],
                    a.prob,
                    self.y2_mean(a.y0i, a.ui, a.si, a.d1, d2),
                );
            }
            let profile: Vec<u64> = (0..2u8)
                .map(|d| bits(self.y1_value(a.y0i, a.ui, a.si, d)))
                .chain((0..4u8).map(|c| bits(self.y2_mean(a.y0i, a.ui, a.si, c >> 1, c & 1))))
                .collect();
            *full1.entry((a.y0i, a.d1)).or_default().entry(profile).or_default() += a.prob;
            let e = m1.entry((a.y0i, y1, a.d1)).or_default();
            e.0 += a.prob;
            e.1 += a.prob * a.d2 as f64;
        }
        out.push(status("mean_se", se.spread()));

        let mut full_gap = 0.0f64;
        for y0i in 0..self.n_y0() {
            let (Some(p0), Some(p1)) = (full1.get(&(y0i, 0)), full1.get(&(y0i, 1))) else { continue };
            let (m0, m1): (f64, f64) = (p0.values().sum(), p1.values().sum());
            for key in p0.keys().chain(p1.keys()) {
                let a = p0.get(key).copied().unwrap_or(0.0) / m0;
                let b = p1.get(key).copied().unwrap_or(0.0) / m1;
                full_gap = full_gap.max((a - b).abs());
            }
        }
        out.push(status("full_se_period1", full_gap));

        for (mass, d2) in m1.values() {
            let p = d2 / mass;
            // Distance to the interior; zero when strictly inside.
            let gap = if p <= 0.0 || p >= 1.0 { 1.0 } else { 0.0 };
            overlap_gap = overlap_gap.max(gap);
        }
        out.push(status("overlap", overlap_gap));
        out
    }

    /// Minimum `E[D_2 | Y_0, Y_1, D_1]` over reachable cells.
    pub fn min_period2_propensity(&self) -> Result<f64, DgpError> {
        self.check_shape()?;
        let mut m: BTreeMap<(usize, u64, u8), (f64, f64)> = BTreeMap::new();
        for a in self.atoms() {
            let e = m.entry((a.y0i, self.y1_value(a.y0i, a.ui, a.si, a.d1).to_bits(), a.d1)).or_default();
            e.0 += a.prob;
            e.1 += a.prob * a.d2 as f64;
        }
        Ok(m.values().map(|(mass, d2)| d2 / mass).fold(1.0, f64::min))
    }
}

pub fn simulate_designer(
    spec: &DesignerSpec,
    n: usize,
    key: impl Into<StreamKey>,
) -> Result<PotentialOutcomeWorld, DgpError> {
    spec.validate()?;
    if n == 0 {
        return config_err("n must be at least 1");
    }
    let mut rng = key.into().rng();
    let mut y0s = Vec::with_capacity(n);
    let mut po = Vec::with_capacity(6 * n);
    let mut assigned = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(2 * n);
    let mut latent = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let y0i = spec.y0.draw_index(&mut rng);
        let ui = draw_index(&spec.types.probs[y0i], &mut rng);
        let si = draw_index(&spec.y1_shock.probs, &mut rng);
        let noise = [spec.y2_noise_sd * std_normal(&mut rng), spec.y2_noise_sd * std_normal(&mut rng)];
        let p1 = spec.p1(y0i, ui);
        let d1 = bernoulli(&mut rng, p1);
        let y1 = spec.y1_value(y0i, ui, si, d1);
        let p2 = spec.p2(y0i, ui, d1, y1);
        let d2 = bernoulli(&mut rng, p2);

        y0s.push(spec.y0.grid[y0i]);
        po.push(spec.y1_value(y0i, ui, si, 0));
        po.push(spec.y1_value(y0i, ui, si, 1));
        for code in 0..4u8 {
            let (a, b) = (code >> 1, code & 1);
            po.push(spec.y2_mean(y0i, ui, si, a, b) + noise[b as usize]);
        }
        assigned.push(TreatmentPath::new(&[d1, d2]).expect("binary path"));
        propensity.extend_from_slice(&[p1, p2]);
        latent.extend_from_slice(&[spec.types.values[ui], spec.y1_shock.values[si]]);
    }
    Ok(PotentialOutcomeWorld::from_parts(
        2,
        y0s,
        po,
        assigned,
        propensity,
        Latent::new(vec!["u".into(), "shock".into()], latent),
        DEFAULT_MAX_HORIZON,
    )?)
}
