//! Discrete-event simulation of single-server polling systems.
//!
//! Covers every discipline, routing and queueing order of the model. Each
//! replication is one sequential event loop driven by one random stream;
//! replications run on separate threads and are combined afterwards.

mod engine;
pub mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ValidatedModel;

pub use engine::{discipline_step, Decision, VisitState};
pub use stats::{Estimate, Tally};

use stats::{half_width, sorted_sum};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation setting: {0}")]
    InvalidConfig(String),
    #[error("cannot merge reports of different models ({left} vs {right})")]
    FingerprintMismatch { left: String, right: String },
    #[error("cannot merge reports with different batch counts")]
    BatchMismatch,
    #[error("nothing to merge")]
    Empty,
}

/// Length of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    /// Simulated time.
    Time(f64),
    /// Number of service completions.
    Customers(u64),
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Time(t) => write!(f, "{t:?}"),
            Horizon::Customers(n) => write!(f, "{n}c"),
        }
    }
}

/// `1e5` is a time horizon; `1000000c` counts served customers.
impl FromStr for Horizon {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || SimError::InvalidConfig(format!("horizon `{s}`"));
        if let Some(n) = s.strip_suffix('c') {
            let n: f64 = n.parse().map_err(|_| bad())?;
            if !(n >= 1.0 && n.fract() == 0.0 && n <= u64::MAX as f64) {
                return Err(bad());
            }
            Ok(Horizon::Customers(n as u64))
        } else {
            let t: f64 = s.strip_suffix('t').unwrap_or(s).parse().map_err(|_| bad())?;
            if !(t.is_finite() && t > 0.0) {
                return Err(bad());
            }
            Ok(Horizon::Time(t))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: Horizon,
    /// Fraction of the horizon discarded before statistics are collected.
    pub warmup: f64,
    pub replications: usize,
    pub seed: u64,
    /// Batches per replication for batch-means intervals.
    pub batches: usize,
    /// Histogram levels at or above this are lumped into the last bin.
    pub max_level: usize,
    /// Safety cap on processed events per replication.
    pub max_events: u64,
}

impl SimConfig {
    pub fn new(horizon: Horizon, seed: u64) -> Self {
        Self {
            horizon,
            warmup: 0.1,
            replications: 1,
            seed,
            batches: 20,
            max_level: 200,
            max_events: 2_000_000_000,
        }
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(0.0..=0.5).contains(&self.warmup) {
            return bad("warmup must lie in [0, 0.5]");
        }
        if self.replications == 0 {
            return bad("at least one replication is required");
        }
        if self.batches < 2 {
            return bad("at least two batches are required");
        }
        match self.horizon {
            Horizon::Time(t) if !(t.is_finite() && t > 0.0) => bad("time horizon must be positive"),
            Horizon::Customers(0) => bad("customer horizon must be positive"),
            _ => Ok(()),
        }
    }
}

/// Raw per-queue output of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueRun {
    pub arrivals: u64,
    pub served: u64,
    pub waits: Tally,
    pub wait_batches: Vec<f64>,
    /// Time integral of the number in system.
    pub area: f64,
    pub area_batches: Vec<f64>,
    /// Times between successive visit beginnings.
    pub cycles: Tally,
    pub cycle_batches: Vec<f64>,
    /// Number in system at visit completions.
    pub visit_end: Tally,
    /// Number in system seen by arriving customers.
    pub histogram: Vec<u64>,
}

/// Raw output of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub seed: u64,
    pub replication: usize,
    pub events: u64,
    pub truncated: bool,
    pub busy_time: f64,
    pub switch_time: f64,
    pub idle_time: f64,
    pub queues: Vec<QueueRun>,
}

impl RunStats {
    pub fn observed_time(&self) -> f64 {
        self.busy_time + self.switch_time + self.idle_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueReport {
    pub mean_wait: Option<Estimate>,
    pub wait_variance: Option<f64>,
    /// Mean number in system (waiting plus in service).
    pub mean_queue: Option<Estimate>,
    pub mean_cycle: Option<Estimate>,
    pub mean_queue_at_visit_end: Option<f64>,
    pub histogram: Vec<u64>,
    pub arrivals: u64,
    pub served: u64,
}

impl QueueReport {
    /// Fraction of arrivals that found fewer than `level` customers; `None`
    /// without observations or when `level` lies beyond the lumped top bin
    /// and that bin is occupied.
    pub fn fraction_below(&self, level: usize) -> Option<f64> {
        let total: u64 = self.histogram.iter().sum();
        if total == 0 {
            return None;
        }
        if level >= self.histogram.len() && self.histogram.last().is_some_and(|&c| c > 0) {
            return None;
        }
        let below: u64 = self.histogram.iter().take(level).sum();
        Some(below as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub fingerprint: String,
    pub batches: usize,
    pub busy_fraction: f64,
    pub switch_fraction: f64,
    pub idle_fraction: f64,
    pub total_events: u64,
    pub truncated: bool,
    pub queues: Vec<QueueReport>,
    pub runs: Vec<RunStats>,
}

impl SimReport {
    /// Pools replications: point estimates from totals, intervals from
    /// batch means for a single replication and from the spread of
    /// replication means otherwise.
    pub fn from_runs(fingerprint: String, batches: usize, runs: Vec<RunStats>) -> Result<Self, SimError> {
        let first = runs.first().ok_or(SimError::Empty)?;
        let n = first.queues.len();
        let times: Vec<f64> = runs.iter().map(RunStats::observed_time).collect();
        let total_time = sorted_sum(&times);
        let fraction = |f: fn(&RunStats) -> f64| {
            let v: Vec<f64> = runs.iter().map(f).collect();
            if total_time > 0.0 {
                sorted_sum(&v) / total_time
            } else {
                0.0
            }
        };
        let queues = (0..n)
            .map(|i| {
                let qs: Vec<&QueueRun> = runs.iter().map(|r| &r.queues[i]).collect();
                let waits = pool_tallies(qs.iter().map(|q| q.waits));
                let per_run_waits: Vec<(f64, f64)> =
                    qs.iter().map(|q| (q.waits.sum, q.waits.count as f64)).collect();
                let per_run_area: Vec<(f64, f64)> =
                    qs.iter().zip(&times).map(|(q, &t)| (q.area, t)).collect();
                let per_run_cycles: Vec<(f64, f64)> =
                    qs.iter().map(|q| (q.cycles.sum, q.cycles.count as f64)).collect();
                let levels = qs.iter().map(|q| q.histogram.len()).max().unwrap_or(0);
                let mut histogram = vec![0u64; levels];
                for q in &qs {
                    for (h, c) in histogram.iter_mut().zip(&q.histogram) {
                        *h += c;
                    }
                }
                QueueReport {
                    mean_wait: pooled(&per_run_waits, qs.first().map(|q| q.wait_batches.as_slice())),
                    wait_variance: waits.variance(),
                    mean_queue: pooled(&per_run_area, qs.first().map(|q| q.area_batches.as_slice())),
                    mean_cycle: pooled(&per_run_cycles, qs.first().map(|q| q.cycle_batches.as_slice())),
                    mean_queue_at_visit_end: pool_tallies(qs.iter().map(|q| q.visit_end)).mean(),
                    histogram,
                    arrivals: qs.iter().map(|q| q.arrivals).sum(),
                    served: qs.iter().map(|q| q.served).sum(),
                }
            })
            .collect();
        Ok(Self {
            fingerprint,
            batches,
            busy_fraction: fraction(|r| r.busy_time),
            switch_fraction: fraction(|r| r.switch_time),
            idle_fraction: fraction(|r| r.idle_time),
            total_events: runs.iter().map(|r| r.events).sum(),
            truncated: runs.iter().any(|r| r.truncated),
            queues,
            runs,
        })
    }

    pub fn replications(&self) -> usize {
        self.runs.len()
    }
}

fn pool_tallies(tallies: impl Iterator<Item = Tally>) -> Tally {
    let all: Vec<Tally> = tallies.collect();
    let sums: Vec<f64> = all.iter().map(|t| t.sum).collect();
    let squares: Vec<f64> = all.iter().map(|t| t.sum_sq).collect();
    Tally {
        count: all.iter().map(|t| t.count).sum(),
        sum: sorted_sum(&sums),
        sum_sq: sorted_sum(&squares),
    }
}

/// `per_run` holds `(total, weight)` per replication; `single_batches` are
/// the batch means of the first replication, used when it is the only one.
fn pooled(per_run: &[(f64, f64)], single_batches: Option<&[f64]>) -> Option<Estimate> {
    let totals: Vec<f64> = per_run.iter().map(|p| p.0).collect();
    let weights: Vec<f64> = per_run.iter().map(|p| p.1).collect();
    let weight = sorted_sum(&weights);
    if weight <= 0.0 {
        return None;
    }
    let mean = sorted_sum(&totals) / weight;
    let (half_width, samples) = if per_run.len() == 1 {
        let b = single_batches.unwrap_or(&[]);
        (half_width(b), b.len())
    } else {
        let means: Vec<f64> = per_run.iter().filter(|p| p.1 > 0.0).map(|p| p.0 / p.1).collect();
        (half_width(&means), means.len())
    };
    Some(Estimate {
        mean,
        half_width,
        samples,
    })
}

/// Simulates `cfg.replications` independent replications. Replication `r`
/// uses the generator seeded with `cfg.seed` advanced by `r` jumps, so the
/// result does not depend on thread scheduling.
pub fn run(model: &ValidatedModel, cfg: &SimConfig) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let reps = cfg.replications;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(reps);
    let mut runs: Vec<Option<RunStats>> = vec![None; reps];
    if workers <= 1 {
        for (r, slot) in runs.iter_mut().enumerate() {
            *slot = Some(engine::simulate(model, cfg, r));
        }
    } else {
        std::thread::scope(|scope| {
            for (w, chunk) in runs.chunks_mut(reps.div_ceil(workers)).enumerate() {
                let start = w * reps.div_ceil(workers);
                scope.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(engine::simulate(model, cfg, start + k));
                    }
                });
            }
        });
    }
    let runs = runs.into_iter().map(|r| r.expect("every replication ran")).collect();
    SimReport::from_runs(model.fingerprint(), cfg.batches, runs)
}

/// Pools reports of the same model by concatenating their replications.
pub fn replicate_merge(reports: &[SimReport]) -> Result<SimReport, SimError> {
    let first = reports.first().ok_or(SimError::Empty)?;
    for r in &reports[1..] {
        if r.fingerprint != first.fingerprint {
            return Err(SimError::FingerprintMismatch {
                left: first.fingerprint.clone(),
                right: r.fingerprint.clone(),
            });
        }
        if r.batches != first.batches {
            return Err(SimError::BatchMismatch);
        }
    }
    let runs = reports.iter().flat_map(|r| r.runs.iter().cloned()).collect();
    SimReport::from_runs(first.fingerprint.clone(), first.batches, runs)
}
