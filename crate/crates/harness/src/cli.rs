use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynpanel_core::dgp::{simulate, DgpConfig};
use dynpanel_core::oracles::{
    check_ab_moments, check_full_se_period1, check_parallel_trends, check_sequential_exchangeability,
    check_trend_equivalence, CheckConfig, OracleError,
};
use dynpanel_core::world::WorldDocument;
use dynpanel_core::{realize_observed, ObservedPanel, PotentialOutcomeWorld, StreamKey};
use sha2::{Digest, Sha256};

use crate::config::{read_json, EstimatorSpec, ExperimentConfig};
use crate::error::HarnessError;
use crate::experiment::{checks_csv, run_experiment, write_outputs, VerdictSummary};
use crate::scenarios;

#[derive(Debug, Parser)]
#[command(name = "dynpanel", version, about = "Simulate dynamic panels, run treatment-effect estimators and check them against oracles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a world and write its observed panel (and the full world with --out).
    Simulate(SimulateArgs),
    /// Run one estimator on a panel CSV.
    Estimate(EstimateArgs),
    /// Run the assumption checks on a world JSON file.
    Check(CheckArgs),
    /// Run a Monte Carlo experiment.
    Experiment(ExperimentArgs),
    /// List (or export) the bundled scenario configurations.
    Scenarios(ScenariosArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment config or bare generator config (`{"kind": …}`).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of units (defaults to the experiment's n_units, else 1000).
    #[arg(long)]
    pub n: Option<usize>,
    /// Directory for panel.csv and world.json; the panel goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Estimator spec (`{"estimator": "adjusted_ipw", …}`).
    #[arg(long)]
    pub config: PathBuf,
    /// Panel CSV with header `unit,t,y,d`.
    pub panel: PathBuf,
    /// Recorded in the report's provenance.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Check configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// World JSON written by `simulate --out`.
    pub world: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config path, or the name of a bundled scenario.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads.
    #[arg(long, env = "DYNPANEL_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScenariosArgs {
    /// Write every bundled config into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn main_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), HarnessError> {
    match cmd {
        Command::Simulate(a) => simulate_cmd(a, stdout),
        Command::Estimate(a) => estimate_cmd(a, stdout),
        Command::Check(a) => check_cmd(a, stdout),
        Command::Experiment(a) => experiment_cmd(a, stdout, stderr),
        Command::Scenarios(a) => scenarios_cmd(a, stdout),
    }
}

fn emit(stdout: &mut dyn Write, body: &[u8]) -> Result<(), HarnessError> {
    stdout.write_all(body).map_err(|e| HarnessError::io("<stdout>", e))
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| HarnessError::io(path, e))
}

fn simulate_cmd(a: SimulateArgs, stdout: &mut dyn Write) -> Result<(), HarnessError> {
    let value: serde_json::Value = read_json(&a.config)?;
    let (dgp, n_default, seed_default) = if value.get("dgp").is_some() {
        let cfg: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| HarnessError::Json { path: a.config.clone(), source: e })?;
        (cfg.dgp, cfg.n_units, cfg.seed)
    } else {
        let dgp: DgpConfig = serde_json::from_value(value)
            .map_err(|e| HarnessError::Json { path: a.config.clone(), source: e })?;
        (dgp, 1000, 0)
    };
    dgp.validate()?;
    let key = StreamKey::replication(a.seed.unwrap_or(seed_default), 0);
    let world = simulate(&dgp, a.n.unwrap_or(n_default), key)?;
    let panel = realize_observed(&world)?;
    let mut csv = Vec::new();
    panel.write_csv(&mut csv)?;
    match a.out {
        Some(dir) => {
            write_file(&dir.join("panel.csv"), &csv)?;
            let doc = serde_json::to_vec(&world.to_json()).expect("world serialises");
            write_file(&dir.join("world.json"), &doc)
        }
        None => emit(stdout, &csv),
    }
}

fn estimate_cmd(a: EstimateArgs, stdout: &mut dyn Write) -> Result<(), HarnessError> {
    let spec: EstimatorSpec = read_json(&a.config)?;
    let file = std::fs::File::open(&a.panel).map_err(|e| HarnessError::io(&a.panel, e))?;
    let panel = ObservedPanel::read_csv(std::io::BufReader::new(file))?;
    let digest = hex::encode(Sha256::digest(serde_json::to_vec(&spec).expect("spec serialises")));
    let mut report = spec.run(&panel)?;
    report = report.with_provenance(a.seed.map_or_else(|| "none".to_string(), |s| s.to_string()), digest);
    let body = match a.format {
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&report).expect("report serialises")).into_bytes(),
        Format::Csv => {
            let f = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
            format!(
                "estimator,beta_hat,gamma_hat,mu_tau2_hat\n{},{},{},{}\n",
                report.estimator,
                f(report.beta_hat),
                f(report.gamma_hat),
                f(report.mu_tau2_hat)
            )
            .into_bytes()
        }
    };
    if let Some(dir) = &a.out {
        let name = if a.format == Format::Json { "estimate.json" } else { "estimate.csv" };
        write_file(&dir.join(name), &body)?;
    }
    emit(stdout, &body)
}

fn check_cmd(a: CheckArgs, stdout: &mut dyn Write) -> Result<(), HarnessError> {
    let cfg: CheckConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CheckConfig::default(),
    };
    cfg.validate()?;
    let doc: WorldDocument = read_json(&a.world)?;
    let world = PotentialOutcomeWorld::from_json(&doc)?;
    let mut verdicts = vec![check_sequential_exchangeability(&world, &CheckConfig { alpha: None, ..cfg.clone() })?];
    if cfg.alpha.is_some() {
        verdicts.push(check_sequential_exchangeability(&world, &cfg)?);
    }
    let eq = check_trend_equivalence(&world, &CheckConfig { alpha: None, ..cfg.clone() })?;
    verdicts.push(eq.trends);
    verdicts.push(check_full_se_period1(&world, &cfg)?);
    if world.horizon() == 2 {
        verdicts.push(check_parallel_trends(&world, &cfg)?);
    }
    match check_ab_moments(&world, &cfg) {
        Ok(v) => verdicts.push(v),
        Err(OracleError::NotApplicable(_)) => {}
        Err(e) => return Err(e.into()),
    }
    let summaries: Vec<VerdictSummary> = verdicts.iter().map(VerdictSummary::from).collect();
    let json = format!("{}\n", serde_json::to_string_pretty(&summaries).expect("verdicts serialise")).into_bytes();
    let csv = checks_csv(&verdicts)?;
    if let Some(dir) = &a.out {
        write_file(&dir.join("verdicts.json"), &json)?;
        write_file(&dir.join("checks.csv"), &csv)?;
    }
    emit(stdout, if a.format == Format::Json { &json } else { &csv })
}

fn load_experiment(config: &str) -> Result<ExperimentConfig, HarnessError> {
    let path = Path::new(config);
    if path.exists() {
        return read_json(path);
    }
    match scenarios::get(config) {
        Some(s) => s.config(),
        None => Err(HarnessError::config(format!("'{config}' is neither a file nor a bundled scenario"))),
    }
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn experiment_cmd(a: ExperimentArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), HarnessError> {
    let mut cfg = load_experiment(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    // The output location is not part of the experiment, so it stays out of
    // the embedded config and its digest.
    let dir = a.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let out = run_experiment(&cfg, a.jobs.unwrap_or_else(default_jobs))?;
    write_outputs(&out, &dir)?;
    match a.format {
        Format::Json => emit(stdout, out.report.to_json().as_bytes())?,
        Format::Csv => emit(stdout, out.report.rows_csv()?.as_bytes())?,
    }
    if !out.report.passed {
        let failed: Vec<String> = out
            .report
            .expectations
            .iter()
            .filter(|x| !x.passed)
            .map(|x| format!("{:?}: {}", x.expectation, x.detail))
            .collect();
        let _ = writeln!(stderr, "report written to {}", dir.display());
        return Err(HarnessError::Expectations(failed));
    }
    Ok(())
}

fn scenarios_cmd(a: ScenariosArgs, stdout: &mut dyn Write) -> Result<(), HarnessError> {
    if let Some(dir) = &a.out {
        for s in scenarios::all() {
            write_file(&dir.join(format!("{}.json", s.name)), s.json.as_bytes())?;
        }
    }
    let mut listing = Vec::new();
    for s in scenarios::all() {
        let cfg = s.config()?;
        listing.push((s.name, cfg.description));
    }
    let body = match a.format {
        Format::Json => {
            let v: Vec<serde_json::Value> =
                listing.iter().map(|(n, d)| serde_json::json!({ "name": n, "description": d })).collect();
            format!("{}\n", serde_json::to_string_pretty(&v).expect("json"))
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["name", "description"])?;
            for (n, d) in &listing {
                w.write_record([*n, d.as_str()])?;
            }
            String::from_utf8(w.into_inner().map_err(|e| HarnessError::config(e.to_string()))?).expect("utf8")
        }
    };
    emit(stdout, body.as_bytes())
}
