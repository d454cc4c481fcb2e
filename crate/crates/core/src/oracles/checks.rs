//! Cell-contrast checks of the identifying assumptions, evaluated on the
//! complete potential-outcome record of a world.
//!
//! Every check reduces to a list of contrasts with Monte Carlo bands; the
//! verdict is `violated` when the contrast with the largest standardized size
//! exceeds `k` bands.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::dgp::LinearDpdmConfig;
use crate::path::TreatmentPath;
use crate::stats::{ks_distance, mean, variance, Hc0Design};
use crate::world::PotentialOutcomeWorld;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    HoldsWithinBand,
    Violated,
    Inconclusive,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::HoldsWithinBand => "holds-within-band",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Latent columns to condition on in addition to the observed history.
/// Columns with few distinct values are matched exactly; others are cut into
/// `bins` quantile bins and also enter the within-cell regression linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaConditioning {
    pub columns: Vec<String>,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

impl AlphaConditioning {
    pub fn column(name: &str) -> Self {
        Self { columns: vec![name.to_string()], bins: default_bins() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    /// Band multiplier for mean contrasts.
    #[serde(default = "default_k")]
    pub k: f64,
    /// Cells with fewer units on either side of a contrast are skipped.
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    /// Columns with at most this many distinct values are treated as discrete.
    #[serde(default = "default_levels")]
    pub max_discrete_levels: usize,
    #[serde(default)]
    pub alpha: Option<AlphaConditioning>,
    /// Band multiplier for the distributional (KS) proxy.
    #[serde(default = "default_ks_k")]
    pub ks_k: f64,
}

fn default_k() -> f64 {
    5.0
}
fn default_min_count() -> usize {
    50
}
fn default_levels() -> usize {
    20
}
fn default_bins() -> usize {
    10
}
fn default_ks_k() -> f64 {
    2.5
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            min_count: default_min_count(),
            max_discrete_levels: default_levels(),
            alpha: None,
            ks_k: default_ks_k(),
        }
    }
}

impl CheckConfig {
    pub fn with_alpha(mut self, alpha: AlphaConditioning) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.k.is_finite() && self.k > 0.0 && self.ks_k.is_finite() && self.ks_k > 0.0) {
            return Err(OracleError::Config("band multipliers must be positive".into()));
        }
        if self.min_count < 2 {
            return Err(OracleError::Config("min_count must be at least 2".into()));
        }
        if let Some(a) = &self.alpha {
            if a.columns.is_empty() || a.bins == 0 {
                return Err(OracleError::Config("alpha conditioning needs at least one column and one bin".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellContrast {
    pub label: String,
    pub contrast: f64,
    pub se: f64,
    pub standardized: f64,
    /// Units on the treated (or first) side of the contrast.
    pub n_a: usize,
    pub n_b: usize,
}

/// `max_abs_contrast` and `noise_band` belong to the contrast with the
/// largest standardized size, so `verdict = violated` exactly when
/// `max_abs_contrast > k · noise_band`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionVerdict {
    pub name: String,
    pub k: f64,
    pub max_abs_contrast: f64,
    pub noise_band: f64,
    pub max_standardized: f64,
    pub verdict: Verdict,
    pub tested: usize,
    pub skipped: usize,
    pub cells: Vec<CellContrast>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn standardized(contrast: f64, band: f64) -> f64 {
    if band > 0.0 {
        contrast.abs() / band
    } else if contrast == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

impl CellContrast {
    fn new(label: String, contrast: f64, se: f64, n_a: usize, n_b: usize) -> Self {
        Self { label, contrast, se, standardized: standardized(contrast, se), n_a, n_b }
    }
}

fn conclude(name: &str, k: f64, cells: Vec<CellContrast>, skipped: usize, note: Option<String>) -> AssumptionVerdict {
    let mut best: Option<&CellContrast> = None;
    for c in &cells {
        if best.is_none_or(|b| c.standardized > b.standardized) {
            best = Some(c);
        }
    }
    let (max_abs_contrast, noise_band, max_standardized, verdict) = match best {
        None => (0.0, 0.0, 0.0, Verdict::Inconclusive),
        Some(b) => {
            let violated = b.contrast.abs() > k * b.se;
            (b.contrast.abs(), b.se, b.standardized, if violated { Verdict::Violated } else { Verdict::HoldsWithinBand })
        }
    };
    AssumptionVerdict {
        name: name.to_string(),
        k,
        max_abs_contrast,
        noise_band,
        max_standardized,
        verdict,
        tested: cells.len(),
        skipped,
        cells,
        note,
    }
}

/// A conditioning variable: matched exactly, or binned and used as a
/// standardized regressor.
enum Column {
    Discrete { index: Vec<u32>, levels: Vec<f64> },
    Continuous { z: Vec<f64>, bin: Vec<u32>, bins: usize },
}

impl Column {
    fn classify(values: &[f64], max_levels: usize, bins: usize) -> Self {
        let mut distinct = BTreeSet::new();
        for v in values {
            distinct.insert((v + 0.0).to_bits());
            if distinct.len() > max_levels {
                break;
            }
        }
        if distinct.len() <= max_levels {
            let mut levels: Vec<f64> = distinct.into_iter().map(f64::from_bits).collect();
            levels.sort_by(f64::total_cmp);
            let index = values
                .iter()
                .map(|v| levels.binary_search_by(|l| l.total_cmp(&(v + 0.0))).expect("level present") as u32)
                .collect();
            return Column::Discrete { index, levels };
        }
        let (m, sd) = (mean(values), variance(values).sqrt());
        let z = values.iter().map(|v| (v - m) / sd).collect();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let cuts: Vec<f64> = (1..bins).map(|j| sorted[j * sorted.len() / bins]).collect();
        let bin = values.iter().map(|v| cuts.partition_point(|c| c <= v) as u32).collect();
        Column::Continuous { z, bin, bins }
    }

    fn radix(&self) -> u128 {
        match self {
            Column::Discrete { levels, .. } => levels.len() as u128,
            Column::Continuous { bins, .. } => *bins as u128,
        }
    }

    fn key(&self, i: usize) -> u128 {
        match self {
            Column::Discrete { index, .. } => index[i] as u128,
            Column::Continuous { bin, .. } => bin[i] as u128,
        }
    }

    fn describe(&self, name: &str, i: usize) -> String {
        match self {
            Column::Discrete { index, levels } => format!("{name}={}", levels[index[i] as usize]),
            Column::Continuous { bin, bins, .. } => format!("{name} bin {}/{bins}", bin[i] + 1),
        }
    }
}

struct Conditioning {
    names: Vec<String>,
    cols: Vec<Column>,
    /// Whether a continuous column also enters the regression.
    regress: Vec<bool>,
}

impl Conditioning {
    fn push(&mut self, name: String, col: Column, regress: bool) {
        self.names.push(name);
        self.cols.push(col);
        self.regress.push(regress);
    }

    fn key(&self, i: usize, prefix: (u128, u128)) -> Result<u128, OracleError> {
        let (mut key, mut mult) = prefix;
        for c in &self.cols {
            key = key
                .checked_add(mult.checked_mul(c.key(i)).ok_or_else(too_many_cells)?)
                .ok_or_else(too_many_cells)?;
            mult = mult.checked_mul(c.radix()).ok_or_else(too_many_cells)?;
        }
        Ok(key)
    }

    fn label(&self, i: usize) -> Vec<String> {
        self.cols
            .iter()
            .zip(&self.names)
            .filter(|(c, _)| !matches!(c, Column::Continuous { bins: 1, .. }))
            .map(|(c, n)| c.describe(n, i))
            .collect()
    }

    fn regressors(&self) -> Vec<&[f64]> {
        self.cols
            .iter()
            .zip(&self.regress)
            .filter_map(|(c, r)| match c {
                Column::Continuous { z, .. } if *r => Some(z.as_slice()),
                _ => None,
            })
            .collect()
    }
}

fn too_many_cells() -> OracleError {
    OracleError::Config("conditioning cells overflow; reduce bins or discrete levels".into())
}

fn alpha_columns(world: &PotentialOutcomeWorld, cfg: &CheckConfig, into: &mut Conditioning) -> Result<(), OracleError> {
    if let Some(a) = &cfg.alpha {
        for name in &a.columns {
            let values = world
                .latent()
                .column(name)
                .ok_or_else(|| OracleError::NotApplicable(format!("world has no latent column '{name}'")))?;
            into.push(name.clone(), Column::classify(&values, cfg.max_discrete_levels, a.bins), true);
        }
    }
    Ok(())
}

fn observed_outcomes(world: &PotentialOutcomeWorld) -> Vec<Vec<f64>> {
    (0..=world.horizon())
        .map(|t| {
            (0..world.n())
                .map(|i| if t == 0 { world.y0(i) } else { world.outcome_along(i, world.assigned(i), t) })
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Form {
    Levels,
    Trends,
}

/// Within-cell contrasts of `E[Y_t(d^t) | history, D_s]` across `D_s`, for
/// every `s ≤ t ≤ T` and every path `d^t`. Returns the verdict and the `t = s`
/// contrasts keyed by label (for the levels/trends identity).
fn se_contrasts(
    world: &PotentialOutcomeWorld,
    cfg: &CheckConfig,
    form: Form,
    name: &str,
) -> Result<(AssumptionVerdict, BTreeMap<String, f64>), OracleError> {
    cfg.validate()?;
    let (n, horizon) = (world.n(), world.horizon());
    let obs = observed_outcomes(world);
    let mut cells = Vec::new();
    let mut skipped = 0usize;
    let mut same_period = BTreeMap::new();
    let mut latent = Conditioning { names: vec![], cols: vec![], regress: vec![] };
    alpha_columns(world, cfg, &mut latent)?;
    let mut history = Conditioning { names: vec![], cols: vec![], regress: vec![] };

    for s in 1..=horizon {
        // Observed Y_{s-1} joins the conditioning set; continuous outcomes
        // are adjusted for linearly rather than binned.
        history.push(format!("Y{}", s - 1), Column::classify(&obs[s - 1], cfg.max_discrete_levels, 1), true);
        let prefix_radix = 1u128 << (s - 1);
        let mut groups: BTreeMap<u128, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let prefix = world.assigned(i).prefix(s - 1).code() as u128;
            let hk = history.key(i, (prefix, prefix_radix))?;
            let mult = history.cols.iter().try_fold(prefix_radix, |m, c| m.checked_mul(c.radix()));
            let key = latent.key(i, (hk, mult.ok_or_else(too_many_cells)?))?;
            groups.entry(key).or_default().push(i);
        }
        let mut regs = history.regressors();
        regs.extend(latent.regressors());
        let k = 2 + regs.len();
        let mut x = vec![0.0; n * k];
        for i in 0..n {
            let row = &mut x[i * k..(i + 1) * k];
            row[0] = 1.0;
            row[1] = world.assigned(i).get(s) as f64;
            for (slot, r) in row[2..].iter_mut().zip(&regs) {
                *slot = r[i];
            }
        }
        let labels: Vec<String> = groups
            .values()
            .map(|idx| {
                let i = idx[0];
                let mut parts = Vec::new();
                if s > 1 {
                    parts.push(format!("D^{}={}", s - 1, world.assigned(i).prefix(s - 1)));
                }
                parts.extend(history.label(i));
                parts.extend(latent.label(i));
                parts.join(", ")
            })
            .collect();
        // Designs depend on `s` only, so each cell is factored once and
        // reused for every outcome path.
        let mut designs = Vec::new();
        let mut unusable = 0usize;
        for (idx, label) in groups.values().zip(labels) {
            let n1 = idx.iter().filter(|&&i| world.assigned(i).get(s) == 1).count();
            let n0 = idx.len() - n1;
            if n1 < cfg.min_count || n0 < cfg.min_count {
                unusable += 1;
                continue;
            }
            let rows = idx.iter().flat_map(|&i| x[i * k..(i + 1) * k].iter().copied()).collect();
            match Hc0Design::new(k, rows, 1) {
                Some(d) => designs.push((idx, label, d, n1, n0)),
                None => unusable += 1,
            }
        }

        let mut y = vec![0.0; n];
        let mut cell_y = Vec::new();
        for t in s..=horizon {
            for path in TreatmentPath::all(t) {
                skipped += unusable;
                for (i, yi) in y.iter_mut().enumerate() {
                    let level = world.outcome(i, path);
                    *yi = match form {
                        Form::Levels => level,
                        Form::Trends if t == s => level - obs[s - 1][i],
                        Form::Trends => level - world.outcome(i, path.prefix(t - 1)),
                    };
                }
                for (idx, label, design, n1, n0) in &designs {
                    // Centring the outcome within the cell changes only the
                    // intercept and keeps the contrast free of level round-off.
                    cell_y.clear();
                    cell_y.extend(idx.iter().map(|&i| y[i]));
                    let len = cell_y.len() as f64;
                    let ybar = cell_y.iter().sum::<f64>() / len;
                    let scale = cell_y.iter().map(|v| v.abs()).sum::<f64>() / len;
                    cell_y.iter_mut().for_each(|v| *v -= ybar);
                    let (contrast, se) = design.fit(&cell_y);
                    // Floor keeps round-off on constant outcomes from reading as signal.
                    let band = se.max(1e-9 * (1.0 + scale));
                    let label = format!("s={s} t={t} d={path} | {label}");
                    if t == s {
                        same_period.insert(label.clone(), contrast);
                    }
                    cells.push(CellContrast::new(label, contrast, band, *n1, *n0));
                }
            }
        }
    }
    let note = match form {
        Form::Levels => None,
        Form::Trends => Some("outcomes differenced against the previous period along the same path".into()),
    };
    Ok((conclude(name, cfg.k, cells, skipped, note), same_period))
}

fn se_name(cfg: &CheckConfig) -> String {
    match &cfg.alpha {
        None => "sequential_exchangeability".into(),
        Some(a) => format!("sequential_exchangeability_given_{}", a.columns.join("_")),
    }
}

/// Mean sequential exchangeability: for each period `s`, within cells of the
/// observed history (and of the configured latent columns), `Y_t(d^t)` for
/// every `t ≥ s` and path must not differ in mean across `D_s`.
pub fn check_sequential_exchangeability(
    world: &PotentialOutcomeWorld,
    cfg: &CheckConfig,
) -> Result<AssumptionVerdict, OracleError> {
    Ok(se_contrasts(world, cfg, Form::Levels, &se_name(cfg))?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendEquivalence {
    pub levels: AssumptionVerdict,
    pub trends: AssumptionVerdict,
    pub agree: bool,
    /// Largest `|levels − trends|` over the `t = s` contrasts, which coincide
    /// algebraically once the conditioned `Y_{s−1}` is subtracted.
    pub identity_max_diff: f64,
}

/// Runs the exchangeability contrasts in levels and in trends form.
pub fn check_trend_equivalence(world: &PotentialOutcomeWorld, cfg: &CheckConfig) -> Result<TrendEquivalence, OracleError> {
    let name = se_name(cfg);
    let (levels, lv) = se_contrasts(world, cfg, Form::Levels, &name)?;
    let (trends, tv) = se_contrasts(world, cfg, Form::Trends, &format!("{name}_trends"))?;
    let identity_max_diff = lv
        .iter()
        .map(|(label, a)| tv.get(label).map_or(f64::INFINITY, |b| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(TrendEquivalence { agree: levels.verdict == trends.verdict, levels, trends, identity_max_diff })
}

/// Invariance of `E[Y_2(0,0) − Y_1(0) | Y_0, D_1, D_2]` across the four
/// treatment cells, per `Y_0` level (pairwise Welch contrasts).
pub fn check_parallel_trends(world: &PotentialOutcomeWorld, cfg: &CheckConfig) -> Result<AssumptionVerdict, OracleError> {
    cfg.validate()?;
    if world.horizon() != 2 {
        return Err(OracleError::Horizon(format!("parallel trends check needs T = 2, got T = {}", world.horizon())));
    }
    let n = world.n();
    let y0 = Column::classify(world.y0_all(), cfg.max_discrete_levels, default_bins());
    let p00 = TreatmentPath::new(&[0, 0]).expect("path");
    let p0 = TreatmentPath::new(&[0]).expect("path");
    // Per (Y_0 key, D_1 D_2 code): Σ, Σ², count, first unit.
    let mut acc: BTreeMap<(u128, u8), (f64, f64, usize, usize)> = BTreeMap::new();
    for i in 0..n {
        let v = world.outcome(i, p00) - world.outcome(i, p0);
        let e = acc.entry((y0.key(i), world.assigned(i).code() as u8)).or_insert((0.0, 0.0, 0, i));
        e.0 += v;
        e.1 += v * v;
        e.2 += 1;
    }
    let mut cells = Vec::new();
    let mut skipped = 0usize;
    let levels: BTreeSet<u128> = acc.keys().map(|k| k.0).collect();
    for level in levels {
        let usable: Vec<(u8, (f64, f64, usize, usize))> = (0..4u8)
            .filter_map(|c| acc.get(&(level, c)).map(|v| (c, *v)))
            .filter(|(_, v)| {
                let ok = v.2 >= cfg.min_count;
                if !ok {
                    skipped += 1;
                }
                ok
            })
            .collect();
        for a in 0..usable.len() {
            for b in a + 1..usable.len() {
                let (ca, (sa, qa, na, first)) = usable[a];
                let (cb, (sb, qb, nb, _)) = usable[b];
                let (ma, mb) = (sa / na as f64, sb / nb as f64);
                let va = (qa / na as f64 - ma * ma).max(0.0) * na as f64 / (na - 1) as f64;
                let vb = (qb / nb as f64 - mb * mb).max(0.0) * nb as f64 / (nb - 1) as f64;
                let band = (va / na as f64 + vb / nb as f64).sqrt().max(1e-9 * (1.0 + ma.abs().max(mb.abs())));
                let fmt = |c: u8| format!("({},{})", c >> 1, c & 1);
                let label = format!("{} | (D1,D2)={} vs {}", y0.describe("Y0", first), fmt(ca), fmt(cb));
                cells.push(CellContrast::new(label, ma - mb, band, na, nb));
            }
        }
    }
    Ok(conclude("parallel_trends", cfg.k, cells, skipped, None))
}

/// Sample analogues of the structural-error orthogonality conditions:
/// `E[ε_s ε_t]` (s < t), `E[D_s ε_t]` (s ≤ t), `E[Δε_t α]` and `E[Δε_t Y_0]`
/// (t ≥ 2), where `ε_t` is the error of the realised arm.
pub fn check_ab_moments(world: &PotentialOutcomeWorld, cfg: &CheckConfig) -> Result<AssumptionVerdict, OracleError> {
    cfg.validate()?;
    let (n, horizon) = (world.n(), world.horizon());
    let latent = world.latent();
    let missing = |what: &str| OracleError::NotApplicable(format!("world lacks structural latent '{what}'"));
    let alpha = latent.column("alpha").ok_or_else(|| missing("alpha"))?;
    let mut eps = vec![Vec::new()];
    for t in 1..=horizon {
        let arms: Vec<Vec<f64>> = (0..2u8)
            .map(|d| {
                let name = LinearDpdmConfig::eps_name(t, d);
                latent.column(&name).ok_or_else(|| missing(&name))
            })
            .collect::<Result<_, _>>()?;
        eps.push((0..n).map(|i| arms[world.assigned(i).get(t) as usize][i]).collect::<Vec<f64>>());
    }
    let d = |i: usize, s: usize| world.assigned(i).get(s) as f64;
    let mut cells = Vec::new();
    let mut moment = |label: String, f: &dyn Fn(usize) -> f64| {
        let prod: Vec<f64> = (0..n).map(f).collect();
        let se = (variance(&prod) / n as f64).sqrt();
        cells.push(CellContrast::new(label, mean(&prod), se, n, 0));
    };
    for t in 1..=horizon {
        for s in 1..t {
            moment(format!("E[eps{s} eps{t}]"), &|i| eps[s][i] * eps[t][i]);
        }
        for s in 1..=t {
            moment(format!("E[D{s} eps{t}]"), &|i| d(i, s) * eps[t][i]);
        }
        if t >= 2 {
            moment(format!("E[(eps{t} - eps{}) alpha]", t - 1), &|i| (eps[t][i] - eps[t - 1][i]) * alpha[i]);
            moment(format!("E[(eps{t} - eps{}) Y0]", t - 1), &|i| (eps[t][i] - eps[t - 1][i]) * world.y0(i));
        }
    }
    Ok(conclude("ab_moments", cfg.k, cells, 0, None))
}

/// Distributional proxy for full exchangeability in period 1: within `Y_0`
/// cells (and latent cells if configured), the two-sample KS distance of each
/// potential outcome between `D_1 = 1` and `D_1 = 0`, banded by
/// `sqrt((n_1 + n_0) / (n_1 n_0))` with multiplier `ks_k`.
pub fn check_full_se_period1(world: &PotentialOutcomeWorld, cfg: &CheckConfig) -> Result<AssumptionVerdict, OracleError> {
    cfg.validate()?;
    let n = world.n();
    let mut cond = Conditioning { names: vec![], cols: vec![], regress: vec![] };
    cond.push("Y0".into(), Column::classify(world.y0_all(), cfg.max_discrete_levels, default_bins()), false);
    alpha_columns(world, cfg, &mut cond)?;
    let mut groups: BTreeMap<u128, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        groups.entry(cond.key(i, (0, 1))?).or_default().push(i);
    }
    let mut cells = Vec::new();
    let mut skipped = 0usize;
    for idx in groups.values() {
        let (treated, control): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| world.assigned(i).get(1) == 1);
        let (n1, n0) = (treated.len(), control.len());
        let paths = (1..=world.horizon()).flat_map(TreatmentPath::all);
        if n1 < cfg.min_count || n0 < cfg.min_count {
            skipped += paths.count();
            continue;
        }
        let band = ((n1 + n0) as f64 / (n1 * n0) as f64).sqrt();
        let where_ = cond.label(idx[0]).join(", ");
        for path in paths {
            let mut a: Vec<f64> = treated.iter().map(|&i| world.outcome(i, path)).collect();
            let mut b: Vec<f64> = control.iter().map(|&i| world.outcome(i, path)).collect();
            let dist = ks_distance(&mut a, &mut b);
            cells.push(CellContrast::new(format!("Y({path}) | {where_}"), dist, band, n1, n0));
        }
    }
    let note = Some("proxy: per-cell two-sample KS distance of marginal potential outcomes across D1".into());
    Ok(conclude("full_exchangeability_period1", cfg.ks_k, cells, skipped, note))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::tests_support::{homogeneous_within_d1, linear_config};
    use crate::dgp::{simulate_designer, simulate_linear_dpdm, simulate_seq_randomized, SecondPeriodPropensity, SeqRandConfig};

    #[test]
    fn verdict_follows_the_band_rule() {
        let cells = vec![
            CellContrast::new("a".into(), 0.3, 0.1, 100, 100),
            CellContrast::new("b".into(), -0.6, 0.1, 100, 100),
        ];
        let v = conclude("x", 5.0, cells, 0, None);
        assert_eq!((v.verdict, v.max_abs_contrast, v.noise_band), (Verdict::Violated, 0.6, 0.1));
        let v = conclude("x", 7.0, v.cells, 0, None);
        assert_eq!(v.verdict, Verdict::HoldsWithinBand);
        assert_eq!(conclude("x", 5.0, vec![], 3, None).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn quantile_bins_are_balanced() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 10.0).collect();
        let Column::Continuous { bin, .. } = Column::classify(&values, 20, 10) else { panic!("continuous") };
        for b in 0..10u32 {
            assert_eq!(bin.iter().filter(|&&x| x == b).count(), 100);
        }
        assert!(matches!(Column::classify(&[1.0, 2.0, 1.0], 20, 10), Column::Discrete { .. }));
    }

    #[test]
    fn randomized_world_passes_and_small_world_is_inconclusive() {
        let w = simulate_seq_randomized(&SeqRandConfig::fully_randomized(), 60_000, 4).unwrap();
        let cfg = CheckConfig::default();
        let se = check_sequential_exchangeability(&w, &cfg).unwrap();
        assert_eq!(se.verdict, Verdict::HoldsWithinBand, "{}", se.max_standardized);
        assert!(se.tested > 0);
        assert_eq!(check_parallel_trends(&w, &cfg).unwrap().verdict, Verdict::HoldsWithinBand);
        assert_eq!(check_full_se_period1(&w, &cfg).unwrap().verdict, Verdict::HoldsWithinBand);
        let tiny = simulate_seq_randomized(&SeqRandConfig::fully_randomized(), 40, 4).unwrap();
        assert_eq!(check_sequential_exchangeability(&tiny, &cfg).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn nonlinear_second_period_assignment_breaks_parallel_trends_only() {
        let cfg = SeqRandConfig {
            p2: SecondPeriodPropensity::Logistic { intercept: 0.0, y0: 0.0, y1: 2.0, d1: 0.0 },
            degenerate_p2: false,
            ..SeqRandConfig::fully_randomized()
        };
        let w = simulate_seq_randomized(&cfg, 100_000, 5).unwrap();
        let c = CheckConfig::default();
        assert_eq!(check_sequential_exchangeability(&w, &c).unwrap().verdict, Verdict::HoldsWithinBand);
        assert_eq!(check_parallel_trends(&w, &c).unwrap().verdict, Verdict::Violated);
    }

    #[test]
    fn fixed_effect_selection_is_detected_and_absorbed() {
        let w = simulate_linear_dpdm(&linear_config(3), 60_000, 3, 6).unwrap();
        let plain = CheckConfig::default();
        let eq = check_trend_equivalence(&w, &plain).unwrap();
        assert_eq!(eq.levels.verdict, Verdict::Violated);
        assert!(eq.agree);
        assert!(eq.identity_max_diff <= 1e-12, "{}", eq.identity_max_diff);
        let given = CheckConfig::default().with_alpha(AlphaConditioning::column("alpha"));
        let eq = check_trend_equivalence(&w, &given).unwrap();
        assert_eq!(eq.levels.verdict, Verdict::HoldsWithinBand, "{}", eq.levels.max_standardized);
        assert!(eq.agree && eq.identity_max_diff <= 1e-12);
        assert_eq!(check_ab_moments(&w, &plain).unwrap().verdict, Verdict::HoldsWithinBand);
    }

    #[test]
    fn ab_moments_flag_serial_correlation_and_vanish_without_errors() {
        let mut cfg = linear_config(3);
        cfg.eps.ar_rho = 0.5;
        let w = simulate_linear_dpdm(&cfg, 20_000, 3, 2).unwrap();
        let v = check_ab_moments(&w, &CheckConfig::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Violated);
        let worst = v.cells.iter().max_by(|a, b| a.standardized.total_cmp(&b.standardized)).unwrap();
        assert!(worst.label.starts_with("E[eps"), "{}", worst.label);

        cfg.eps = crate::dgp::EpsDist { sd: [0.0, 0.0], ar_rho: 0.0 };
        let w = simulate_linear_dpdm(&cfg, 1_000, 3, 2).unwrap();
        let v = check_ab_moments(&w, &CheckConfig::default()).unwrap();
        assert!(v.cells.iter().all(|c| c.contrast == 0.0));
        assert_eq!(v.verdict, Verdict::HoldsWithinBand);

        let d = simulate_designer(&homogeneous_within_d1(), 100, 1).unwrap();
        assert!(matches!(check_ab_moments(&d, &CheckConfig::default()), Err(OracleError::NotApplicable(_))));
    }

    #[test]
    fn checks_are_deterministic() {
        let w = simulate_designer(&homogeneous_within_d1(), 20_000, 3).unwrap();
        let c = CheckConfig::default();
        let a = serde_json::to_string(&check_sequential_exchangeability(&w, &c).unwrap()).unwrap();
        let b = serde_json::to_string(&check_sequential_exchangeability(&w, &c).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(check_parallel_trends(&w, &c).unwrap().verdict, Verdict::HoldsWithinBand);
    }
}
