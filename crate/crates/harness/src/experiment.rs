//! Oracle world, replications and aggregation.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use dynpanel_core::dgp::{simulate, DgpConfig};
use dynpanel_core::estimators::projection_weights;
use dynpanel_core::oracles::{
    causal_targets, check_ab_moments, check_full_se_period1, check_parallel_trends, check_trend_equivalence,
    AssumptionVerdict, CheckConfig, OracleError, Verdict,
};
use dynpanel_core::{realize_observed, CausalTargets, PotentialOutcomeWorld, StreamKey};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{quantity_value, ExperimentConfig, Expectation, TargetName, TolerancePolicy, SCHEMA_VERSION};
use crate::error::HarnessError;

/// Condensed verdict; per-cell detail goes to the checks CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub name: String,
    pub verdict: Verdict,
    pub max_abs_contrast: f64,
    pub noise_band: f64,
    pub max_standardized: f64,
    pub k: f64,
    pub tested: usize,
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_cell: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl From<&AssumptionVerdict> for VerdictSummary {
    fn from(v: &AssumptionVerdict) -> Self {
        let worst = v.cells.iter().filter(|c| c.standardized == v.max_standardized).map(|c| c.label.clone()).next();
        Self {
            name: v.name.clone(),
            verdict: v.verdict,
            max_abs_contrast: v.max_abs_contrast,
            noise_band: v.noise_band,
            max_standardized: v.max_standardized,
            k: v.k,
            tested: v.tested,
            skipped: v.skipped,
            worst_cell: worst,
            note: v.note.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendAgreement {
    pub levels: String,
    pub trends: String,
    pub agree: bool,
    pub identity_max_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub cells: usize,
    pub degenerate: bool,
    pub mean_sq: f64,
    pub min_normalized: f64,
    pub normalized_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSection {
    pub n: usize,
    pub stream: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub causal: Option<CausalTargets>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_star: Option<f64>,
    pub verdicts: Vec<VerdictSummary>,
    pub trend_equivalence: Vec<TrendAgreement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl OracleSection {
    pub fn target(&self, name: TargetName) -> Option<f64> {
        let c = self.causal.as_ref();
        match name {
            TargetName::ConvexAggregate => c.and_then(|c| c.convex_aggregate),
            TargetName::Plim2sls => c.and_then(|c| c.plim_direct),
            TargetName::AteTau2OverD1 => c.map(|c| c.ate_tau2_over_d1),
            TargetName::AteTau2D1Is0 => c.map(|c| c.ate_tau2_given_d1.0),
            TargetName::AteTau2D1Is1 => c.map(|c| c.ate_tau2_given_d1.1),
            TargetName::AteTau1 => c.map(|c| c.ate_tau1),
            TargetName::BetaStar => self.beta_star,
            TargetName::GammaStar => self.gamma_star,
        }
    }

    pub fn verdict(&self, name: &str) -> Option<&VerdictSummary> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: String,
    pub quantity: String,
    pub target: String,
    pub oracle_value: Option<f64>,
    pub successes: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    pub mc_se: Option<f64>,
    pub coverage: Option<f64>,
    /// `|bias| ≤ max(abs_floor, k · mc_se)`.
    pub within_tolerance: Option<bool>,
    pub failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub expectation: Expectation,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub name: String,
    pub config_digest: String,
    pub versions: BTreeMap<String, String>,
    pub config: ExperimentConfig,
    pub oracle: OracleSection,
    pub rows: Vec<EstimateRow>,
    pub expectations: Vec<ExpectationResult>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn row(&self, estimator: &str, quantity: Option<&str>) -> Option<&EstimateRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && quantity.is_none_or(|q| r.quantity == q))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn rows_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "estimator", "quantity", "target", "oracle_value", "successes", "mean", "sd", "bias", "rmse", "mc_se",
            "coverage", "within_tolerance", "failures",
        ])?;
        let f = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        for r in &self.rows {
            let failures: Vec<String> = r.failures.iter().map(|(k, v)| format!("{k}={v}")).collect();
            w.write_record([
                r.estimator.clone(),
                r.quantity.clone(),
                r.target.clone(),
                f(r.oracle_value),
                r.successes.to_string(),
                f(r.mean),
                f(r.sd),
                f(r.bias),
                f(r.rmse),
                f(r.mc_se),
                f(r.coverage),
                r.within_tolerance.map(|b| b.to_string()).unwrap_or_default(),
                failures.join(";"),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| HarnessError::config(e.to_string()))?).expect("utf8"))
    }
}

/// Everything a run produces; only `report` is covered by the determinism
/// guarantee (wall time lives in `wall_time_secs`).
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    /// `(replication, estimator, quantity, value or error kind)`.
    pub replications: Vec<(usize, String, String, Result<f64, String>)>,
    pub check_cells: Vec<AssumptionVerdict>,
    pub wall_time_secs: f64,
    pub jobs: usize,
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("dynpanel-harness".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("dynpanel-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ])
}

/// Oracle targets and assumption verdicts of one world.
pub fn oracle_section(
    world: &PotentialOutcomeWorld,
    dgp: &DgpConfig,
    checks: &CheckConfig,
    stream: StreamKey,
) -> Result<(OracleSection, Vec<AssumptionVerdict>), HarnessError> {
    let mut notes = Vec::new();
    let mut verdicts = Vec::new();
    let mut agreements = Vec::new();
    let causal = if world.horizon() == 2 { Some(causal_targets(world)?) } else { None };
    let (beta_star, gamma_star) = match dgp {
        DgpConfig::LinearDpdm(c) => (Some(c.beta_star), Some(c.gamma_star)),
        _ => (None, None),
    };

    let unconditional = CheckConfig { alpha: None, ..checks.clone() };
    let mut se_configs = vec![unconditional.clone()];
    if checks.alpha.is_some() {
        se_configs.push(checks.clone());
    }
    for cfg in &se_configs {
        let eq = check_trend_equivalence(world, cfg)?;
        agreements.push(TrendAgreement {
            levels: eq.levels.name.clone(),
            trends: eq.trends.name.clone(),
            agree: eq.agree,
            identity_max_diff: eq.identity_max_diff,
        });
        verdicts.push(eq.levels);
        verdicts.push(eq.trends);
    }
    verdicts.push(check_full_se_period1(world, &unconditional)?);
    if world.horizon() == 2 {
        verdicts.push(check_parallel_trends(world, &unconditional)?);
    }
    match check_ab_moments(world, &unconditional) {
        Ok(v) => verdicts.push(v),
        Err(OracleError::NotApplicable(why)) => notes.push(format!("ab_moments skipped: {why}")),
        Err(e) => return Err(e.into()),
    }

    let weights = if world.horizon() == 2 {
        let panel = realize_observed(world)?;
        match projection_weights(&panel, &Default::default()) {
            Ok(pw) => Some(WeightSummary {
                cells: pw.cells.len(),
                degenerate: pw.degenerate,
                mean_sq: pw.mean_sq,
                min_normalized: pw.cells.iter().map(|c| c.normalized).fold(f64::INFINITY, f64::min),
                normalized_mean: pw.normalized_mean(),
            }),
            Err(e) => {
                notes.push(format!("projection weights unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };

    let section = OracleSection {
        n: world.n(),
        stream: stream.to_string(),
        causal,
        beta_star,
        gamma_star,
        verdicts: verdicts.iter().map(VerdictSummary::from).collect(),
        trend_equivalence: agreements,
        weights,
        notes,
    };
    Ok((section, verdicts))
}

type RepOutcome = Vec<Result<Vec<Option<f64>>, (String, String)>>;

/// Runs the full experiment on a pool of `jobs` workers. The output does not
/// depend on `jobs`: replications are independent streams and are reduced in
/// index order.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::config(format!("worker pool: {e}")))?;

    let oracle_key = StreamKey::oracle(cfg.seed);
    let (oracle, check_cells) = {
        let world = simulate(&cfg.dgp, cfg.oracle_n, oracle_key)?;
        oracle_section(&world, &cfg.dgp, &cfg.checks, oracle_key)?
    };

    let outcomes: Vec<Result<RepOutcome, HarnessError>> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let world = simulate(&cfg.dgp, cfg.n_units, StreamKey::replication(cfg.seed, r as u64))?;
                let panel = realize_observed(&world)?;
                drop(world);
                Ok(cfg
                    .estimators
                    .iter()
                    .map(|spec| match spec.run(&panel) {
                        Ok(rep) => Ok(spec.quantities().iter().map(|q| quantity_value(&rep, q.name)).collect()),
                        Err(e) => Err((e.kind().to_string(), e.to_string())),
                    })
                    .collect())
            })
            .collect()
    });
    let outcomes: Vec<RepOutcome> = outcomes.into_iter().collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut replications = Vec::new();
    for (e, spec) in cfg.estimators.iter().enumerate() {
        let label = spec.label();
        let mut failures: BTreeMap<String, usize> = BTreeMap::new();
        let mut first_error = None;
        for (r, out) in outcomes.iter().enumerate() {
            if let Err((kind, msg)) = &out[e] {
                *failures.entry(kind.clone()).or_default() += 1;
                first_error.get_or_insert_with(|| format!("replication {r}: {msg}"));
            }
        }
        let n_failed: usize = failures.values().sum();
        if 2 * n_failed > cfg.replications {
            return Err(HarnessError::FailureRate {
                estimator: label,
                failures: n_failed,
                replications: cfg.replications,
                first: first_error.unwrap_or_default(),
            });
        }
        for (qi, q) in spec.quantities().iter().enumerate() {
            let mut values = Vec::new();
            for (r, out) in outcomes.iter().enumerate() {
                let v = match &out[e] {
                    Ok(vals) => vals[qi].ok_or_else(|| "missing".to_string()),
                    Err((kind, _)) => Err(kind.clone()),
                };
                if let Ok(x) = v {
                    values.push(x);
                }
                replications.push((r, label.clone(), q.name.to_string(), v));
            }
            rows.push(summarize(&label, q.name, q.target, oracle.target(q.target), &values, &failures, &cfg.tolerance));
        }
    }

    let expectations: Vec<ExpectationResult> =
        cfg.expectations.iter().map(|x| evaluate(x, &rows, &oracle, cfg)).collect();
    let passed = expectations.iter().all(|x| x.passed);
    let report = ExperimentReport {
        schema: SCHEMA_VERSION,
        name: cfg.name.clone(),
        config_digest: cfg.digest(),
        versions: versions(),
        config: cfg.clone(),
        oracle,
        rows,
        expectations,
        passed,
    };
    Ok(ExperimentOutput {
        report,
        replications,
        check_cells,
        wall_time_secs: start.elapsed().as_secs_f64(),
        jobs: jobs.max(1),
    })
}

/// Monte Carlo summary of one estimator quantity across replications.
pub fn summarize(
    estimator: &str,
    quantity: &str,
    target: TargetName,
    oracle_value: Option<f64>,
    values: &[f64],
    failures: &BTreeMap<String, usize>,
    tol: &TolerancePolicy,
) -> EstimateRow {
    let n = values.len();
    let mut row = EstimateRow {
        estimator: estimator.to_string(),
        quantity: quantity.to_string(),
        target: target.label().to_string(),
        oracle_value,
        successes: n,
        mean: None,
        sd: None,
        bias: None,
        rmse: None,
        mc_se: None,
        coverage: None,
        within_tolerance: None,
        failures: failures.clone(),
    };
    if n == 0 {
        return row;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    let mc_se = sd / (n as f64).sqrt();
    row.mean = Some(mean);
    row.sd = Some(sd);
    row.mc_se = Some(mc_se);
    if let Some(t) = oracle_value {
        let bias = mean - t;
        row.bias = Some(bias);
        row.rmse = Some((values.iter().map(|v| (v - t) * (v - t)).sum::<f64>() / n as f64).sqrt());
        let band = tol.coverage_k * sd;
        row.coverage = Some(values.iter().filter(|v| (*v - t).abs() <= band).count() as f64 / n as f64);
        row.within_tolerance = Some(bias.abs() <= tol.abs_floor.max(tol.k * mc_se));
    }
    row
}

fn evaluate(x: &Expectation, rows: &[EstimateRow], oracle: &OracleSection, cfg: &ExperimentConfig) -> ExpectationResult {
    let find = |est: &str, q: &Option<String>| {
        rows.iter().find(|r| r.estimator == est && q.as_ref().is_none_or(|q| &r.quantity == q))
    };
    let (passed, detail) = match x {
        Expectation::Matches { estimator, quantity } => match find(estimator, quantity) {
            Some(r) => match (r.bias, r.mc_se) {
                (Some(b), Some(se)) => {
                    let tol = cfg.tolerance.abs_floor.max(cfg.tolerance.k * se);
                    (b.abs() <= tol, format!("|bias| = {:.5} vs tolerance {tol:.5}", b.abs()))
                }
                _ => (false, "no oracle value or no successful replication".into()),
            },
            None => (false, format!("no row for '{estimator}'")),
        },
        Expectation::Misses { estimator, quantity } => match find(estimator, quantity) {
            Some(r) => match (r.bias, r.mc_se) {
                (Some(b), Some(se)) => {
                    let band = cfg.tolerance.k * se;
                    (b.abs() > band, format!("|bias| = {:.5} vs {}-s.e. band {band:.5}", b.abs(), cfg.tolerance.k))
                }
                _ => (false, "no oracle value or no successful replication".into()),
            },
            None => (false, format!("no row for '{estimator}'")),
        },
        Expectation::Coverage { estimator, quantity, min } => match find(estimator, quantity).and_then(|r| r.coverage) {
            Some(c) => (c >= *min, format!("coverage {c:.4} vs required {min}")),
            None => (false, format!("no coverage for '{estimator}'")),
        },
        Expectation::Verdict { check, verdict } => match oracle.verdict(check) {
            Some(v) => (
                v.verdict == *verdict,
                format!("{} (max standardized contrast {:.3}, k = {})", v.verdict, v.max_standardized, v.k),
            ),
            None => (false, format!("check '{check}' was not run")),
        },
        Expectation::TrendsAgree => {
            let bad: Vec<&str> = oracle.trend_equivalence.iter().filter(|t| !t.agree).map(|t| t.levels.as_str()).collect();
            let diff = oracle.trend_equivalence.iter().map(|t| t.identity_max_diff).fold(0.0, f64::max);
            (bad.is_empty() && diff <= 1e-12, format!("disagreements {bad:?}; identity max diff {diff:.3e}"))
        }
        Expectation::ConvexWeights => match &oracle.weights {
            Some(w) => (
                !w.degenerate && w.min_normalized >= 0.0 && (w.normalized_mean - 1.0).abs() <= 1e-9,
                format!("min {:.4}, mean {:.12}, degenerate {}", w.min_normalized, w.normalized_mean, w.degenerate),
            ),
            None => (false, "no projection weights".into()),
        },
    };
    ExpectationResult { expectation: x.clone(), passed, detail }
}

/// Writes `report.json`, `estimates.csv`, `replications.csv`, `checks.csv`
/// and `run_meta.json` into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let write = |name: &str, body: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| HarnessError::io(p, e))
    };
    write("report.json", out.report.to_json().as_bytes())?;
    write("estimates.csv", out.report.rows_csv()?.as_bytes())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replication", "estimator", "quantity", "value", "error"])?;
    for (r, e, q, v) in &out.replications {
        let (val, err) = match v {
            Ok(x) => (format!("{x:?}"), String::new()),
            Err(k) => (String::new(), k.clone()),
        };
        w.write_record([r.to_string(), e.clone(), q.clone(), val, err])?;
    }
    write("replications.csv", &w.into_inner().map_err(|e| HarnessError::config(e.to_string()))?)?;
    write("checks.csv", &checks_csv(&out.check_cells)?)?;

    let meta = serde_json::json!({ "wall_time_secs": out.wall_time_secs, "jobs": out.jobs });
    write("run_meta.json", format!("{}\n", serde_json::to_string_pretty(&meta).expect("json")).as_bytes())?;
    Ok(())
}

pub fn checks_csv(verdicts: &[AssumptionVerdict]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "cell", "contrast", "se", "standardized", "n_a", "n_b"])?;
    for v in verdicts {
        for c in &v.cells {
            w.write_record([
                v.name.clone(),
                c.label.clone(),
                format!("{:?}", c.contrast),
                format!("{:?}", c.se),
                format!("{:?}", c.standardized),
                c.n_a.to_string(),
                c.n_b.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| HarnessError::config(e.to_string()))
}
