//! End-to-end acceptance suite. Every criterion prints one line with its
//! verdict, the measured quantity and the runtime against its budget; the
//! test fails if any criterion fails.

use std::io::Write;
use std::time::Instant;

use dynpanel_core::dgp::{
    simulate, simulate_designer, AssumptionFlags, CellEffects, DesignerSpec, DgpConfig, DiscreteDist, LatentTypes,
    Y0Dist,
};
use dynpanel_core::estimators::{
    adjusted_ipw, fit_fd_2sls, fwl_beta, transformed_2sls, CondMeanEstimator, TwoSlsOptions,
};
use dynpanel_core::oracles::{
    audit_unit_decomposition, check_sequential_exchangeability, check_trend_equivalence, AssumptionVerdict,
    CheckConfig, Verdict,
};
use dynpanel_core::{realize_observed, StreamKey};
use dynpanel_harness::config::ExperimentConfig;
use dynpanel_harness::experiment::{EstimateRow, ExperimentReport};
use dynpanel_harness::{run_experiment, scenarios};
use rand::Rng;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    secs: f64,
    budget: Option<f64>,
}

impl Line {
    fn ok(&self) -> bool {
        self.passed && self.budget.is_none_or(|b| self.secs < b)
    }

    fn print(&self) {
        let budget = match self.budget {
            Some(b) => format!("{:.1} s of {b:.0} s", self.secs),
            None => format!("{:.1} s", self.secs),
        };
        let status = if self.ok() { "PASS" } else { "FAIL" };
        // Written past the test harness capture so the lines always show.
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "acceptance {:>2} {status} {}: {} ({budget})", self.id, self.name, self.detail);
        let _ = out.flush();
    }
}

struct Suite {
    lines: Vec<Line>,
}

impl Suite {
    fn run<F>(&mut self, id: usize, name: &'static str, budget: Option<f64>, f: F)
    where
        F: FnOnce() -> (bool, String),
    {
        let start = Instant::now();
        let (passed, detail) = f();
        let line = Line { id, name, passed, detail, secs: start.elapsed().as_secs_f64(), budget };
        line.print();
        self.lines.push(line);
    }
}

fn scenario(name: &str) -> ExperimentConfig {
    scenarios::get(name).unwrap_or_else(|| panic!("bundled scenario {name}")).config().expect("scenario parses")
}

fn run(name: &str, jobs: usize) -> ExperimentReport {
    run_experiment(&scenario(name), jobs).unwrap_or_else(|e| panic!("{name}: {e}")).report
}

fn row<'a>(report: &'a ExperimentReport, estimator: &str, quantity: &str) -> &'a EstimateRow {
    report.row(estimator, Some(quantity)).unwrap_or_else(|| panic!("{}: no row {estimator}/{quantity}", report.name))
}

/// `|mean − oracle| ≤ max(floor, 3 · MC s.e.)`, with the numbers for the log.
fn close_to_oracle(r: &EstimateRow, floor: f64) -> (bool, String) {
    let (Some(mean), Some(target), Some(se)) = (r.mean, r.oracle_value, r.mc_se) else {
        return (false, format!("{} has no estimate or oracle value", r.estimator));
    };
    let band = floor.max(3.0 * se);
    let gap = mean - target;
    (gap.abs() <= band, format!("{} mean {mean:.4} vs {target:.4} (gap {gap:+.4}, band {band:.4})", r.estimator))
}

fn verdict_of(report: &ExperimentReport, name: &str) -> Option<Verdict> {
    report.oracle.verdict(name).map(|v| v.verdict)
}

/// A designer world with random effects and propensities on a small grid.
fn random_designer(seed: u64) -> DesignerSpec {
    let mut rng = StreamKey::new(seed, 0).rng();
    let g = rng.random_range(2..=4usize);
    let mut y0_probs: Vec<f64> = (0..g).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = y0_probs.iter().sum();
    y0_probs.iter_mut().for_each(|p| *p /= total);
    let effect = |rng: &mut dynpanel_core::rng::SimRng| CellEffects {
        delta1: rng.random_range(-1.0..1.0),
        tau1: rng.random_range(0.5..2.0),
        delta2: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        tau2: [rng.random_range(-1.0..3.0), rng.random_range(-1.0..3.0)],
    };
    let effects = (0..g).map(|_| vec![effect(&mut rng), effect(&mut rng)]).collect();
    DesignerSpec {
        y0: Y0Dist { grid: (0..g).map(|v| v as f64).collect(), probs: y0_probs },
        types: LatentTypes {
            values: vec![0.0, 1.0],
            probs: (0..g)
                .map(|_| {
                    let p = rng.random_range(0.2..0.8);
                    vec![p, 1.0 - p]
                })
                .collect(),
        },
        effects,
        y1_shock: DiscreteDist { values: vec![-0.5, 0.5], probs: vec![0.5, 0.5] },
        y2_noise_sd: 1.0,
        e1: (0..g).map(|_| rng.random_range(0.2..0.8)).collect(),
        e1_u_coef: 0.0,
        e2: (0..g).map(|_| [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)]).collect(),
        e2_y1_coef: rng.random_range(-0.5..0.5),
        e2_u_coef: rng.random_range(-0.5..0.5),
        flags: AssumptionFlags::default(),
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn describe(v: &AssumptionVerdict) -> String {
    format!("{} {} (max |z| {:.2})", v.name, v.verdict, v.max_standardized)
}

/// Least-squares slope of `ys` on `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[test]
fn acceptance_criteria() {
    let mut suite = Suite { lines: Vec::new() };
    let mut reports: Vec<ExperimentReport> = Vec::new();
    let opts = TwoSlsOptions::default();

    suite.run(1, "FWL form equals direct 2SLS", Some(10.0), || {
        let mut worst = 0.0f64;
        let mut failures = Vec::new();
        for seed in 0..100 {
            let world = simulate_designer(&random_designer(seed), 2000, StreamKey::new(seed, 1)).unwrap();
            let panel = realize_observed(&world).unwrap();
            match (fit_fd_2sls(&panel, &opts), fwl_beta(&panel, &opts)) {
                (Ok(a), Ok(b)) => worst = worst.max(relative_gap(a.beta_hat, b.beta_hat)),
                (a, b) => failures.push(format!("seed {seed}: {:?} / {:?}", a.err(), b.err())),
            }
        }
        (
            worst <= 1e-10 && failures.is_empty(),
            format!("max relative gap {worst:.2e} over 100 panels; {} failed fits {failures:?}", failures.len()),
        )
    });

    suite.run(2, "per-unit decomposition of observed changes", Some(5.0), || {
        let mut checked = 0;
        let mut mismatches = 0;
        let mut kinds = Vec::new();
        for s in scenarios::all() {
            let cfg = s.config().unwrap();
            let world = simulate(&cfg.dgp, 10_000, StreamKey::new(cfg.seed, 1)).unwrap();
            let audit = audit_unit_decomposition(&world, None).unwrap();
            checked += audit.checked;
            mismatches += audit.mismatches;
            kinds.push(cfg.dgp.kind());
        }
        kinds.dedup();
        (
            mismatches == 0 && checked > 0,
            format!("{mismatches} exact mismatches in {checked} unit-periods ({})", kinds.join(", ")),
        )
    });

    suite.run(3, "2SLS converges to the convex aggregate", Some(120.0), || {
        let report = run("convex_weights", 1);
        let (ok, detail) = close_to_oracle(row(&report, "fd_2sls", "beta_hat"), 0.01);
        let w = report.oracle.weights.clone().expect("weights reported");
        let weights_ok = !w.degenerate && w.min_normalized >= 0.0 && (w.normalized_mean - 1.0).abs() <= 1e-9;
        let detail = format!(
            "{detail}; normalized weights min {:.4} mean {:.12}",
            w.min_normalized, w.normalized_mean
        );
        reports.push(report);
        (ok && weights_ok, detail)
    });

    suite.run(4, "adjusted IPW recovers the average period-2 effect", Some(180.0), || {
        let report = run("ipw_average_effect", 1);
        let (ok, detail) = close_to_oracle(row(&report, "adjusted_ipw", "mu_tau2_hat"), 0.01);
        let r = row(&report, "fd_2sls", "beta_hat");
        let (gap, band) = (r.bias.unwrap(), 3.0 * r.mc_se.unwrap());
        let missed = gap.abs() > band;
        let detail = format!("{detail}; fd_2sls gap {gap:+.4} vs 3 s.e. {band:.4}");
        reports.push(report);
        (ok && missed, detail)
    });

    suite.run(5, "transformed 2SLS agrees with adjusted IPW", Some(30.0), || {
        let cme = CondMeanEstimator::cell();
        let (mut both, mut worst) = (0usize, 0.0f64);
        for seed in 0..100 {
            let world = simulate_designer(&random_designer(1000 + seed), 2000, StreamKey::new(seed, 2)).unwrap();
            let panel = realize_observed(&world).unwrap();
            if let (Ok(a), Ok(b)) = (adjusted_ipw(&panel, &cme), transformed_2sls(&panel, &cme, &opts)) {
                both += 1;
                worst = worst.max(relative_gap(a.mu_tau2_hat, b.mu_tau2_hat));
            }
        }
        (both > 0 && worst <= 1e-8, format!("max relative gap {worst:.2e} on {both} of 100 panels where both succeed"))
    });

    suite.run(6, "Arellano-Bond GMM is consistent", Some(180.0), || {
        let report = run("ab_consistency", 1);
        let b = row(&report, "arellano_bond", "beta_hat").mean.unwrap();
        let g = row(&report, "arellano_bond", "gamma_hat").mean.unwrap();
        let moments = report.oracle.verdict("ab_moments").expect("moments checked");
        let ok = (g - 0.5).abs() <= 0.01 && (b - 1.0).abs() <= 0.01 && moments.max_standardized <= 4.0;
        let detail = format!(
            "mean gamma {g:.4}, mean beta {b:.4}; moment contrasts max |z| {:.2} (band 4)",
            moments.max_standardized
        );
        reports.push(report);
        (ok, detail)
    });

    suite.run(7, "exchangeability fails without and holds given the fixed effect", Some(60.0), || {
        let cfg = scenario("ab_consistency");
        let world = simulate(&cfg.dgp, cfg.oracle_n, StreamKey::oracle(cfg.seed)).unwrap();
        let with_alpha = cfg.checks.clone();
        let plain = CheckConfig { alpha: None, ..with_alpha.clone() };
        let u = check_sequential_exchangeability(&world, &plain).unwrap();
        let c = check_sequential_exchangeability(&world, &with_alpha).unwrap();
        (
            u.verdict == Verdict::Violated && c.verdict == Verdict::HoldsWithinBand,
            format!("{}; {}", describe(&u), describe(&c)),
        )
    });

    for (name, pt) in [
        ("se_vs_pt", Verdict::Violated),
        ("seqrand_nonlinear", Verdict::Violated),
        ("seqrand_degenerate", Verdict::HoldsWithinBand),
    ] {
        suite.run(8, "exchangeability and parallel trends diverge", Some(120.0), || {
            let report = run(name, 1);
            let se = verdict_of(&report, "sequential_exchangeability");
            let got = verdict_of(&report, "parallel_trends");
            let ok = report.oracle.n >= 1_000_000 && se == Some(Verdict::HoldsWithinBand) && got == Some(pt);
            let detail = format!(
                "{name}: exchangeability {}, parallel trends {} (expected {pt})",
                se.map_or("missing".into(), |v| v.to_string()),
                got.map_or("missing".into(), |v| v.to_string()),
            );
            reports.push(report);
            (ok, detail)
        });
    }

    suite.run(9, "levels and trends exchangeability agree", Some(60.0), || {
        let mut worst = 0.0f64;
        let mut disagreements = Vec::new();
        let mut checks = 0;
        for s in scenarios::all() {
            let cfg = s.config().unwrap();
            let world = simulate(&cfg.dgp, cfg.oracle_n, StreamKey::oracle(cfg.seed)).unwrap();
            let mut configs = vec![CheckConfig { alpha: None, ..cfg.checks.clone() }];
            if cfg.checks.alpha.is_some() {
                configs.push(cfg.checks.clone());
            }
            for c in &configs {
                let eq = check_trend_equivalence(&world, c).unwrap();
                checks += 1;
                worst = worst.max(eq.identity_max_diff);
                if !eq.agree {
                    disagreements.push(format!("{}: {}", s.name, eq.levels.name));
                }
            }
        }
        (
            disagreements.is_empty() && worst <= 1e-12,
            format!("{checks} checks, disagreements {disagreements:?}, same-period identity max diff {worst:.2e}"),
        )
    });

    suite.run(10, "cell-mode adjusted IPW error shrinks at the root-n rate", Some(300.0), || {
        let cfg = scenario("ipw_average_effect");
        let DgpConfig::Designer(spec) = &cfg.dgp else { panic!("ipw_average_effect is a designer world") };
        let target = spec.population().unwrap().ate_tau2_over_d1;
        let cme = CondMeanEstimator::cell();
        let reps = 60u64;
        let (mut xs, mut ys, mut parts) = (Vec::new(), Vec::new(), Vec::new());
        for (j, n) in [1_000usize, 10_000, 100_000, 1_000_000].into_iter().enumerate() {
            let mut sq = Vec::new();
            for r in 0..reps {
                let key = StreamKey::new(cfg.seed + 1 + j as u64, r + 1);
                let panel = realize_observed(&simulate_designer(spec, n, key).unwrap()).unwrap();
                if let Ok(fit) = adjusted_ipw(&panel, &cme) {
                    sq.push((fit.mu_tau2_hat - target).powi(2));
                }
            }
            let rmse = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
            xs.push((n as f64).ln());
            ys.push(rmse.ln());
            parts.push(format!("n={n}: rmse {rmse:.2e} ({}/{reps})", sq.len()));
        }
        let b = slope(&xs, &ys);
        ((-0.6..=-0.4).contains(&b), format!("log-log slope {b:.3}; {}", parts.join(", ")))
    });

    suite.run(11, "reports are identical across reruns and worker counts", None, || {
        let mut differing = Vec::new();
        for first in &reports {
            let again = run(&first.name, 8);
            if again.to_json() != first.to_json() {
                differing.push(first.name.clone());
            }
        }
        let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
        let covered = scenarios::all().iter().all(|s| names.contains(&s.name));
        (
            covered && differing.is_empty(),
            format!("{} scenarios rerun with 8 workers after 1; differing {differing:?}", reports.len()),
        )
    });

    let failed: Vec<String> =
        suite.lines.iter().filter(|l| !l.ok()).map(|l| format!("{} {}", l.id, l.name)).collect();
    assert!(failed.is_empty(), "failed acceptance criteria: {failed:?}");
}
