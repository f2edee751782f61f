//! The `polling` command-line tool.

pub mod records;
pub mod render;

use std::ffi::OsString;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use polling_core::config::{self, Config};
use polling_core::exact::{self, Analysis, ExactError, ExactReport};
use polling_core::scenarios::{self, ScenarioError};
use polling_core::sim::{self, Horizon, SimConfig, SimReport};
use polling_core::{PollingModel, Stability, ValidatedModel};

use crate::records::SimHeader;
use crate::render::Comparison;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Input = 2,
    Unstable = 3,
    Unsupported = 4,
    ValidationFailed = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }

    fn input(message: impl Into<String>) -> Self {
        Self::new(Exit::Input, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Largest |z| accepted by `validate`.
pub const Z_LIMIT: f64 = 3.0;

#[derive(Parser, Debug)]
#[command(name = "polling", version, about = "Exact analysis and simulation of polling systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact mean cycle, visit, waiting times and queue lengths.
    Analyze {
        config: PathBuf,
        /// Write one JSON record per queue to this file.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Discrete-event simulation with confidence intervals.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        /// Write one JSON record per queue per replication to this file.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Compare exact mean waits with simulation.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        records: Option<PathBuf>,
        /// Multiply the exact mean wait of a queue before comparing (QUEUE:FACTOR).
        #[arg(long, hide = true, value_parser = parse_corruption)]
        corrupt_exact: Option<(usize, f64)>,
    },
    /// Application scenarios.
    #[command(subcommand)]
    Scenario(Scenario),
}

#[derive(Subcommand, Debug)]
pub enum Scenario {
    /// Stochastic economic lot scheduling with base-stock control.
    Selsp {
        config: PathBuf,
        /// Find the smallest base stock per product reaching this fill rate.
        #[arg(long)]
        target_fill: Option<f64>,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Fixed-cycle traffic signals.
    Traffic {
        config: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    #[arg(long, env = "POLLING_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Simulated time (`1e5`) or served customers per replication (`1e6c`).
    #[arg(long, default_value = "500000c")]
    pub horizon: Horizon,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Fraction of the horizon discarded as warm-up.
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    /// Batches per replication for single-replication intervals.
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
}

impl SimArgs {
    pub fn config(&self) -> SimConfig {
        let mut c = SimConfig::new(self.horizon, self.seed)
            .with_replications(self.reps)
            .with_warmup(self.warmup);
        c.batches = self.batches;
        c
    }
}

fn parse_corruption(s: &str) -> Result<(usize, f64), String> {
    let (q, f) = s.split_once(':').ok_or("expected QUEUE:FACTOR")?;
    let q: usize = q.trim().parse().map_err(|_| "queue must be a positive integer")?;
    let f: f64 = f.trim().parse().map_err(|_| "factor must be a number")?;
    if q == 0 {
        return Err("queues are numbered from 1".into());
    }
    Ok((q, f))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Exit::Input as i32 } else { Exit::Ok as i32 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match run(&cli.command, out, err) {
        Ok(()) => Exit::Ok as i32,
        Err(f) => {
            let _ = writeln!(err, "error: {f}");
            f.exit as i32
        }
    }
}

pub fn run(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Analyze { config, records } => analyze(config, records.as_deref(), out),
        Command::Simulate { config, sim, records } => simulate(config, sim, records.as_deref(), out, err),
        Command::Validate {
            config,
            sim,
            records,
            corrupt_exact,
        } => validate(config, sim, records.as_deref(), *corrupt_exact, out, err),
        Command::Scenario(Scenario::Selsp {
            config,
            target_fill,
            sim,
        }) => selsp(config, *target_fill, sim, out),
        Command::Scenario(Scenario::Traffic { config, sim }) => traffic(config, sim, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::input(format!("cannot write output: {e}")))
}

pub fn load(path: &Path) -> Result<Config, Failure> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    config::parse(&src).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path, err: Option<&mut dyn Write>) -> Result<(Config, ValidatedModel), Failure> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    let cfg = config::parse(&src).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let model: PollingModel = cfg
        .require_model()
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?
        .clone();
    let v = model.validate().map_err(|errs| {
        let lines: Vec<String> = errs
            .iter()
            .map(|e| format!("{}: {}", path.display(), config::locate(&cfg, &src, e)))
            .collect();
        Failure::input(lines.join("\n"))
    })?;
    if let Some(err) = err {
        for w in v.warnings() {
            let _ = writeln!(err, "warning: {w}");
        }
    }
    Ok((cfg, v))
}

fn exact_failure(e: ExactError) -> Failure {
    match e {
        ExactError::Unstable { .. } => Failure::new(Exit::Unstable, e.to_string()),
        ExactError::UnsupportedDiscipline { .. } => Failure::new(Exit::Unsupported, format!("{e} (`polling simulate`)")),
        ExactError::UnsupportedRouting(_) | ExactError::ZeroSwitchover => {
            Failure::new(Exit::Unsupported, format!("{e}; use `polling simulate` instead"))
        }
        _ => Failure::new(Exit::Unsupported, e.to_string()),
    }
}

fn exact_report(v: &ValidatedModel) -> Result<ExactReport, Failure> {
    Analysis::new(v).map(|a| a.report()).map_err(exact_failure)
}

fn write_records(path: &Path, recs: &[records::RunRecord]) -> Result<(), Failure> {
    let f = File::create(path).map_err(|e| Failure::input(format!("cannot create {}: {e}", path.display())))?;
    records::write(BufWriter::new(f), recs).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn analyze(path: &Path, records_path: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    let (cfg, v) = load_model(path, None)?;
    let report = exact_report(&v)?;
    let fp = cfg.fingerprint();
    if let Some(p) = records_path {
        write_records(p, &records::exact_records("analyze", &fp, &report))?;
    }
    emit(out, &render::exact(&fp, &report))
}

fn run_sim(v: &ValidatedModel, args: &SimArgs, fingerprint: &str) -> Result<(SimConfig, SimReport), Failure> {
    let cfg = args.config();
    let mut report = sim::run(v, &cfg).map_err(|e| Failure::input(e.to_string()))?;
    report.fingerprint = fingerprint.to_string();
    Ok((cfg, report))
}

fn header(fingerprint: &str, cfg: &SimConfig) -> SimHeader {
    SimHeader {
        fingerprint: fingerprint.to_string(),
        seed: cfg.seed,
        horizon: cfg.horizon.to_string(),
        warmup: cfg.warmup,
    }
}

fn simulate(
    path: &Path,
    args: &SimArgs,
    records_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let (cfg, v) = load_model(path, Some(err))?;
    if v.stability() == Stability::Unknown {
        let _ = writeln!(err, "note: stability of this discipline mix is not known in closed form");
    }
    let fp = cfg.fingerprint();
    let (sc, report) = run_sim(&v, args, &fp)?;
    if report.truncated {
        let _ = writeln!(err, "warning: a replication hit the event limit before the horizon");
    }
    if let Some(p) = records_path {
        write_records(p, &records::sim_records("simulate", &fp, &sc, &report, None))?;
    }
    emit(out, &render::sim(&header(&fp, &sc), &report))
}

fn validate(
    path: &Path,
    args: &SimArgs,
    records_path: Option<&Path>,
    corrupt: Option<(usize, f64)>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let (cfg, v) = load_model(path, Some(err))?;
    let fp = cfg.fingerprint();
    let (exact, skipped) = match Analysis::new(&v) {
        Ok(a) => (Some(a.report()), None),
        Err(e @ ExactError::Unstable { .. }) => return Err(exact_failure(e)),
        Err(e) => (None, Some(e.to_string())),
    };
    let exact = match (exact, corrupt) {
        (Some(mut r), Some((q, factor))) => {
            let w = r
                .mean_wait
                .get_mut(q - 1)
                .ok_or_else(|| Failure::input(format!("no queue {q} to corrupt")))?;
            *w = w.map(|x| x * factor);
            r.pcl = exact::pcl_check(&v, &r.mean_wait);
            Some(r)
        }
        (r, _) => r,
    };
    let (sc, report) = run_sim(&v, args, &fp)?;
    let rows: Vec<Comparison> = report
        .queues
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let e = exact.as_ref().and_then(|r| r.mean_wait[i]);
            let z = match (e, q.mean_wait) {
                (Some(x), Some(s)) => Some(s.z_score(x)),
                _ => None,
            };
            Comparison {
                exact: e,
                sim: q.mean_wait,
                z,
                ok: z.is_none_or(|z| z.abs() <= Z_LIMIT),
            }
        })
        .collect();
    if let Some(p) = records_path {
        write_records(p, &records::sim_records("validate", &fp, &sc, &report, exact.as_ref()))?;
    }
    let pcl = exact.as_ref().map(|r| &r.pcl);
    emit(out, &render::validation(&fp, &rows, pcl, skipped.as_deref()))?;
    let bad: Vec<String> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.ok)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    let pcl_failed = pcl.and_then(|p| p.passes()) == Some(false);
    if bad.is_empty() && !pcl_failed {
        return Ok(());
    }
    let mut msg = String::from("validation failed");
    if !bad.is_empty() {
        msg.push_str(&format!(": |z| > {Z_LIMIT} for queue(s) {}", bad.join(", ")));
    }
    if pcl_failed {
        msg.push_str(if bad.is_empty() { ": " } else { "; " });
        msg.push_str("pseudo-conservation law residual too large");
    }
    Err(Failure::new(Exit::ValidationFailed, msg))
}

fn scenario_failure(e: ScenarioError) -> Failure {
    match e {
        ScenarioError::Unstable { .. } => Failure::new(Exit::Unstable, e.to_string()),
        ScenarioError::Exact(inner) => exact_failure(inner),
        other => Failure::input(other.to_string()),
    }
}

fn selsp(path: &Path, target: Option<f64>, args: &SimArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load(path)?;
    let spec = cfg
        .selsp
        .as_ref()
        .ok_or_else(|| Failure::input(format!("{}: config has no [selsp] section", path.display())))?;
    let sc = args.config();
    let fp = cfg.fingerprint();
    match target {
        Some(t) => {
            let rows = scenarios::selsp_basestock_search(spec, t, &sc).map_err(scenario_failure)?;
            emit(out, &render::basestock(&fp, t, &rows))
        }
        None => {
            let r = scenarios::selsp_evaluate(spec, &sc).map_err(scenario_failure)?;
            emit(out, &render::selsp(&fp, &r))
        }
    }
}

fn traffic(path: &Path, args: &SimArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load(path)?;
    let spec = cfg
        .traffic
        .as_ref()
        .ok_or_else(|| Failure::input(format!("{}: config has no [traffic] section", path.display())))?;
    let r = scenarios::traffic_evaluate(spec, &args.config()).map_err(scenario_failure)?;
    emit(out, &render::traffic(&cfg.fingerprint(), &r))
}
