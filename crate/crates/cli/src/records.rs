//! Line-delimited JSON run records.
//!
//! Every line is one self-contained object describing one queue in one
//! replication (or, for exact runs, one queue). Simulation records carry the
//! raw replication output, so [`rebuild_sim`] reproduces the pooled report
//! bit for bit.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use polling_core::exact::{ExactReport, PclStatus};
use polling_core::sim::{QueueRun, RunStats, SimConfig, SimReport};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Exact,
    Sim,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub schema_version: u32,
    pub command: String,
    pub engine: Engine,
    pub fingerprint: String,
    /// One-based queue index.
    pub queue: usize,
    pub queues: usize,
    pub seed: Option<u64>,
    pub replication: Option<usize>,
    pub exact: Option<ExactMetrics>,
    pub sim: Option<SimMetrics>,
    pub pcl: Option<PclRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactMetrics {
    pub rho: f64,
    pub mean_cycle: f64,
    pub mean_visit: f64,
    pub mean_intervisit: f64,
    pub mean_wait: Option<f64>,
    pub mean_queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimMetrics {
    pub horizon: String,
    pub warmup: f64,
    pub batches: usize,
    pub replications: usize,
    pub events: u64,
    pub truncated: bool,
    pub busy_time: f64,
    pub switch_time: f64,
    pub idle_time: f64,
    pub mean_wait: Option<f64>,
    pub mean_queue: Option<f64>,
    pub run: QueueRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case", deny_unknown_fields)]
pub enum PclRecord {
    Checked { residual: f64, residual_rel: f64 },
    NotApplicable { reason: String },
}

impl From<&PclStatus> for PclRecord {
    fn from(p: &PclStatus) -> Self {
        match p {
            PclStatus::Checked { residual, residual_rel } => PclRecord::Checked {
                residual: *residual,
                residual_rel: *residual_rel,
            },
            PclStatus::NotApplicable { reason } => PclRecord::NotApplicable { reason: reason.clone() },
        }
    }
}

fn exact_metrics(r: &ExactReport, i: usize) -> ExactMetrics {
    ExactMetrics {
        rho: r.rho_i[i],
        mean_cycle: r.basics.mean_cycle,
        mean_visit: r.basics.mean_visit[i],
        mean_intervisit: r.basics.mean_intervisit[i],
        mean_wait: r.mean_wait[i],
        mean_queue: r.mean_queue[i],
    }
}

pub fn exact_records(command: &str, fingerprint: &str, r: &ExactReport) -> Vec<RunRecord> {
    let n = r.rho_i.len();
    (0..n)
        .map(|i| RunRecord {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            engine: Engine::Exact,
            fingerprint: fingerprint.to_string(),
            queue: i + 1,
            queues: n,
            seed: None,
            replication: None,
            exact: Some(exact_metrics(r, i)),
            sim: None,
            pcl: Some((&r.pcl).into()),
        })
        .collect()
}

/// One record per queue per replication, ordered by replication then queue.
pub fn sim_records(
    command: &str,
    fingerprint: &str,
    cfg: &SimConfig,
    report: &SimReport,
    exact: Option<&ExactReport>,
) -> Vec<RunRecord> {
    let mut out = Vec::new();
    for run in &report.runs {
        let n = run.queues.len();
        let t = run.observed_time();
        for (i, q) in run.queues.iter().enumerate() {
            out.push(RunRecord {
                schema_version: SCHEMA_VERSION,
                command: command.to_string(),
                engine: if exact.is_some() { Engine::Both } else { Engine::Sim },
                fingerprint: fingerprint.to_string(),
                queue: i + 1,
                queues: n,
                seed: Some(run.seed),
                replication: Some(run.replication),
                exact: exact.map(|r| exact_metrics(r, i)),
                sim: Some(SimMetrics {
                    horizon: cfg.horizon.to_string(),
                    warmup: cfg.warmup,
                    batches: report.batches,
                    replications: report.replications(),
                    events: run.events,
                    truncated: run.truncated,
                    busy_time: run.busy_time,
                    switch_time: run.switch_time,
                    idle_time: run.idle_time,
                    mean_wait: q.waits.mean(),
                    mean_queue: (t > 0.0).then(|| q.area / t),
                    run: q.clone(),
                }),
                pcl: exact.map(|r| (&r.pcl).into()),
            });
        }
    }
    out
}

pub fn write(mut w: impl Write, records: &[RunRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "record line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for RecordError {}

pub fn read(r: impl BufRead) -> Result<Vec<RunRecord>, RecordError> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let err = |message: String| RecordError { line: k + 1, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(err(format!("unsupported schema version {}", rec.schema_version)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Simulation settings recovered from records, for rendering headers.
#[derive(Debug, Clone, PartialEq)]
pub struct SimHeader {
    pub fingerprint: String,
    pub seed: u64,
    pub horizon: String,
    pub warmup: f64,
}

/// Reassembles the pooled simulation report from its records.
pub fn rebuild_sim(records: &[RunRecord]) -> Result<(SimHeader, SimReport), RecordError> {
    let fail = |message: &str| RecordError {
        line: 0,
        message: message.to_string(),
    };
    let first = records.first().ok_or_else(|| fail("no records"))?;
    let first_sim = first.sim.as_ref().ok_or_else(|| fail("records carry no simulation output"))?;
    let mut by_rep: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if r.fingerprint != first.fingerprint {
            return Err(fail("records mix different models"));
        }
        let rep = r.replication.ok_or_else(|| fail("simulation record without replication"))?;
        by_rep.entry(rep).or_default().push(r);
    }
    let mut runs = Vec::with_capacity(by_rep.len());
    for (rep, mut recs) in by_rep {
        recs.sort_by_key(|r| r.queue);
        let head = recs[0];
        let s = head.sim.as_ref().ok_or_else(|| fail("record without simulation output"))?;
        if recs.len() != head.queues || recs.iter().enumerate().any(|(i, r)| r.queue != i + 1) {
            return Err(fail("replication is missing queues"));
        }
        let queues = recs
            .iter()
            .map(|r| r.sim.as_ref().map(|s| s.run.clone()).ok_or_else(|| fail("record without simulation output")))
            .collect::<Result<Vec<_>, _>>()?;
        runs.push(RunStats {
            seed: head.seed.ok_or_else(|| fail("simulation record without seed"))?,
            replication: rep,
            events: s.events,
            truncated: s.truncated,
            busy_time: s.busy_time,
            switch_time: s.switch_time,
            idle_time: s.idle_time,
            queues,
        });
    }
    if runs.len() != first_sim.replications {
        return Err(fail("replication count does not match the records"));
    }
    let report = SimReport::from_runs(first.fingerprint.clone(), first_sim.batches, runs)
        .map_err(|e| fail(&e.to_string()))?;
    let header = SimHeader {
        fingerprint: first.fingerprint.clone(),
        seed: first.seed.unwrap_or_default(),
        horizon: first_sim.horizon.clone(),
        warmup: first_sim.warmup,
    };
    Ok((header, report))
}
