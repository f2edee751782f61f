//! Declarative polling-system instances, validation, and load profiles.
//!
//! Queue indices are zero-based throughout the library. Configuration files
//! use one-based indices; the translation happens in [`crate::config`].

use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::randvar::RandVar;

/// Tolerance on Markov routing row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Discipline {
    Exhaustive,
    Gated,
    /// Serve only customers present when the server last began a visit to
    /// `parent`. Under elevator routing the gate is set at each sweep start
    /// instead and `parent` only has to be a valid index.
    GloballyGated { parent: usize },
    /// Exhaustive-type k-limited: arrivals during the visit are candidates.
    KLimited { k: u64 },
    /// After each service, continue with probability `p` if customers remain.
    Bernoulli { p: f64 },
    /// Non-preemptive time limit, redrawn at every visit beginning.
    TimeLimited { limit: RandVar },
}

impl Discipline {
    /// Disciplines the exact engine can analyse.
    pub fn is_branching(&self) -> bool {
        matches!(
            self,
            Discipline::Exhaustive | Discipline::Gated | Discipline::GloballyGated { .. }
        )
    }

    /// Arrivals during a visit wait behind a gate.
    pub fn is_gated_type(&self) -> bool {
        matches!(self, Discipline::Gated | Discipline::GloballyGated { .. })
    }
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discipline::Exhaustive => write!(f, "exhaustive"),
            Discipline::Gated => write!(f, "gated"),
            Discipline::GloballyGated { parent } => write!(f, "globally-gated({})", parent + 1),
            Discipline::KLimited { k } => write!(f, "k-limited({k})"),
            Discipline::Bernoulli { p } => write!(f, "bernoulli({p:?})"),
            Discipline::TimeLimited { limit } => write!(f, "time-limited({limit})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Order {
    Fcfs,
    Lcfs,
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Order::Fcfs => "fcfs",
            Order::Lcfs => "lcfs",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Routing {
    Cyclic,
    /// Periodic polling table; wraps from the last entry to the first.
    Table(Vec<usize>),
    /// Row-stochastic transition matrix between queues.
    Markovian(Vec<Vec<f64>>),
    /// Up sweep `0..N`, then down sweep `N-1..=0`; the end queues are
    /// visited twice in a row, separated by the diagonal switch-over.
    Elevator,
}

impl Routing {
    pub fn name(&self) -> &'static str {
        match self {
            Routing::Cyclic => "cyclic",
            Routing::Table(_) => "table",
            Routing::Markovian(_) => "markovian",
            Routing::Elevator => "elevator",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueSpec {
    pub lambda: f64,
    pub service: RandVar,
    pub discipline: Discipline,
    pub order: Order,
}

impl QueueSpec {
    pub fn new(lambda: f64, service: RandVar, discipline: Discipline) -> Self {
        Self {
            lambda,
            service,
            discipline,
            order: Order::Fcfs,
        }
    }

    pub fn with_order(mut self, order: Order) -> Self {
        self.order = order;
        self
    }

    pub fn load(&self) -> f64 {
        self.lambda * self.service.mean()
    }
}

/// Switch-over times, entry `(i, j)` being the time to move from queue `i`
/// to queue `j`. Entries that no route uses may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchoverMatrix {
    n: usize,
    entries: Vec<Option<RandVar>>,
}

impl SwitchoverMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            entries: vec![None; n * n],
        }
    }

    /// Cyclic ring: `ring[i]` is the switch-over from `i` to `i + 1 (mod n)`.
    pub fn ring(ring: Vec<RandVar>) -> Self {
        let n = ring.len();
        let mut m = Self::empty(n);
        for (i, s) in ring.into_iter().enumerate() {
            m.set(i, (i + 1) % n, s);
        }
        m
    }

    /// Ring that also fills the reverse legs `(i + 1, i)` with `ring[i]`,
    /// for routes that travel in both directions.
    pub fn symmetric_ring(ring: Vec<RandVar>) -> Self {
        let n = ring.len();
        let mut m = Self::ring(ring.clone());
        for (i, s) in ring.into_iter().enumerate() {
            let j = (i + 1) % n;
            if m.get(j, i).is_none() {
                m.set(j, i, s);
            }
        }
        m
    }

    pub fn full(rows: Vec<Vec<RandVar>>) -> Self {
        let n = rows.len();
        let mut m = Self::empty(n);
        for (i, row) in rows.into_iter().enumerate() {
            for (j, s) in row.into_iter().enumerate().take(n) {
                m.set(i, j, s);
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> Option<&RandVar> {
        self.entries.get(from * self.n + to).and_then(Option::as_ref)
    }

    pub fn set(&mut self, from: usize, to: usize, value: RandVar) {
        self.entries[from * self.n + to] = Some(value);
    }

    /// The switch-over for a leg that validation has guaranteed to exist.
    pub fn leg(&self, from: usize, to: usize) -> &RandVar {
        self.get(from, to)
            .unwrap_or_else(|| panic!("switch-over ({from},{to}) missing from a validated model"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PollingModel {
    pub queues: Vec<QueueSpec>,
    pub switchover: SwitchoverMatrix,
    pub routing: Routing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    /// Branching disciplines only and total load below one.
    Stable,
    /// Load below one but some discipline has no known stability condition.
    Unknown,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadProfile {
    pub rho_i: Vec<f64>,
    pub rho: f64,
    /// Mean total switch-over along one pass of the visit sequence; absent
    /// for Markovian routing.
    pub mean_switchover: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub queue: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.queue {
            Some(q) => write!(f, "queue {} `{}`: {}", q + 1, self.field, self.message),
            None => write!(f, "`{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ValidationError {}

/// A model that passed structural validation, with its load profile and
/// stability status attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    model: PollingModel,
    load: LoadProfile,
    stability: Stability,
    warnings: Vec<String>,
}

impl ValidatedModel {
    pub fn model(&self) -> &PollingModel {
        &self.model
    }

    pub fn into_model(self) -> PollingModel {
        self.model
    }

    pub fn load(&self) -> &LoadProfile {
        &self.load
    }

    pub fn stability(&self) -> Stability {
        self.stability
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn n(&self) -> usize {
        self.model.queues.len()
    }

    pub fn queue(&self, i: usize) -> &QueueSpec {
        &self.model.queues[i]
    }

    pub fn fingerprint(&self) -> String {
        self.model.fingerprint()
    }
}

impl PollingModel {
    pub fn n(&self) -> usize {
        self.queues.len()
    }

    /// Switch-over legs travelled in one pass of a deterministic route, in
    /// order. `None` for Markovian routing.
    pub fn route_legs(&self) -> Option<Vec<(usize, usize)>> {
        let n = self.n();
        match &self.routing {
            Routing::Cyclic => Some((0..n).map(|i| (i, (i + 1) % n)).collect()),
            Routing::Table(seq) => Some(
                (0..seq.len())
                    .map(|k| (seq[k], seq[(k + 1) % seq.len()]))
                    .collect(),
            ),
            Routing::Elevator => {
                let seq = elevator_sequence(n);
                Some(
                    (0..seq.len())
                        .map(|k| (seq[k], seq[(k + 1) % seq.len()]))
                        .collect(),
                )
            }
            Routing::Markovian(_) => None,
        }
    }

    /// Mean and second moment of the total switch-over along one pass of the
    /// route, with independent legs.
    pub fn total_switchover_moments(&self) -> Option<(f64, f64)> {
        let legs = self.route_legs()?;
        let mut mean = 0.0;
        let mut var = 0.0;
        for (i, j) in legs {
            let s = self.switchover.get(i, j)?;
            mean += s.mean();
            var += s.variance();
        }
        Some((mean, var + mean * mean))
    }

    pub fn load(&self) -> LoadProfile {
        let rho_i: Vec<f64> = self.queues.iter().map(QueueSpec::load).collect();
        let rho = rho_i.iter().sum();
        LoadProfile {
            rho_i,
            rho,
            mean_switchover: self.total_switchover_moments().map(|(m, _)| m),
        }
    }

    /// Content hash of the normalized model.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Normalized textual form; any semantic change alters it.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("routing={}", self.routing.name()));
        match &self.routing {
            Routing::Table(seq) => out.push_str(&format!("{seq:?}")),
            Routing::Markovian(p) => out.push_str(&format!("{p:?}")),
            _ => {}
        }
        out.push('\n');
        for q in &self.queues {
            out.push_str(&format!(
                "queue lambda={:?} service={} discipline={} order={}\n",
                q.lambda, q.service, q.discipline, q.order
            ));
        }
        let n = self.switchover.size();
        for i in 0..n {
            for j in 0..n {
                if let Some(s) = self.switchover.get(i, j) {
                    out.push_str(&format!("switch {i} {j} {s}\n"));
                }
            }
        }
        out
    }

    pub fn validate(self) -> Result<ValidatedModel, Vec<ValidationError>> {
        validate(self)
    }
}

/// Queue visited at each position of the elevator route.
pub fn elevator_sequence(n: usize) -> Vec<usize> {
    (0..n).chain((0..n).rev()).collect()
}

fn err(queue: Option<usize>, field: &str, message: impl Into<String>) -> ValidationError {
    ValidationError {
        queue,
        field: field.to_string(),
        message: message.into(),
    }
}

pub fn validate(mut model: PollingModel) -> Result<ValidatedModel, Vec<ValidationError>> {
    let mut errors = Vec::new();
    let n = model.n();
    if n == 0 {
        return Err(vec![err(None, "queues", "at least one queue is required")]);
    }
    if model.switchover.size() != n {
        return Err(vec![err(
            None,
            "switchover",
            format!("matrix is {0}x{0} but there are {n} queues", model.switchover.size()),
        )]);
    }

    let mut gg_parent: Option<usize> = None;
    for (i, q) in model.queues.iter().enumerate() {
        if !(q.lambda.is_finite() && q.lambda >= 0.0) {
            errors.push(err(Some(i), "lambda", format!("must be finite and nonnegative, got {}", q.lambda)));
        }
        match &q.discipline {
            Discipline::KLimited { k } if *k == 0 => {
                errors.push(err(Some(i), "discipline", "k-limited requires k >= 1"));
            }
            Discipline::Bernoulli { p } if !(0.0..=1.0).contains(p) => {
                errors.push(err(Some(i), "discipline", format!("bernoulli p must lie in [0,1], got {p}")));
            }
            Discipline::GloballyGated { parent } => {
                if *parent >= n {
                    errors.push(err(
                        Some(i),
                        "discipline",
                        format!("globally gated parent {} is not a queue", parent + 1),
                    ));
                } else if let Some(existing) = gg_parent {
                    if existing != *parent {
                        errors.push(err(
                            Some(i),
                            "discipline",
                            format!(
                                "globally gated parent {} differs from parent {} used elsewhere",
                                parent + 1,
                                existing + 1
                            ),
                        ));
                    }
                } else {
                    gg_parent = Some(*parent);
                }
            }
            _ => {}
        }
    }

    match &model.routing {
        Routing::Cyclic => {}
        Routing::Table(seq) => {
            if seq.is_empty() {
                errors.push(err(None, "routing", "table must not be empty"));
            }
            if let Some(bad) = seq.iter().find(|&&q| q >= n) {
                errors.push(err(None, "routing", format!("table entry {} is not a queue", bad + 1)));
            }
            for q in 0..n {
                if !seq.contains(&q) {
                    errors.push(err(Some(q), "routing", "table never visits this queue"));
                }
            }
        }
        Routing::Markovian(p) => {
            if p.len() != n || p.iter().any(|row| row.len() != n) {
                errors.push(err(None, "routing", format!("markov matrix must be {n}x{n}")));
            } else {
                for (i, row) in p.iter().enumerate() {
                    if row.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
                        errors.push(err(Some(i), "routing", "transition probabilities must be nonnegative"));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        errors.push(err(Some(i), "routing", format!("row sums to {sum}, expected 1")));
                    }
                    for (j, &x) in row.iter().enumerate() {
                        if x > 0.0 && model.switchover.get(i, j).is_none() {
                            errors.push(err(
                                Some(i),
                                "switchover",
                                format!("missing entry ({},{}) for a reachable transition", i + 1, j + 1),
                            ));
                        }
                    }
                }
                if !irreducible(p) {
                    errors.push(err(None, "routing", "markov routing chain is not irreducible"));
                }
            }
        }
        Routing::Elevator => {
            for q in [0, n - 1] {
                if model.switchover.get(q, q).is_none() {
                    model.switchover.set(q, q, RandVar::zero());
                }
            }
        }
    }

    if let Some(legs) = model.route_legs() {
        if errors.iter().all(|e| e.field != "routing") {
            for (i, j) in legs {
                if model.switchover.get(i, j).is_none() {
                    errors.push(err(
                        Some(i),
                        "switchover",
                        format!("missing entry ({},{}) on the visit sequence", i + 1, j + 1),
                    ));
                }
            }
        }
    }

    if !errors.is_empty() {
        errors.dedup();
        return Err(errors);
    }

    let load = model.load();
    let mut warnings = Vec::new();
    let stability = if load.rho >= 1.0 {
        warnings.push(format!("total load rho = {} >= 1: the system is unstable", load.rho));
        Stability::Unstable
    } else if model.queues.iter().all(|q| q.discipline.is_branching()) {
        Stability::Stable
    } else {
        Stability::Unknown
    };
    if load.mean_switchover == Some(0.0) {
        warnings.push("total switch-over time is zero".to_string());
    }
    Ok(ValidatedModel {
        model,
        load,
        stability,
        warnings,
    })
}

fn irreducible(p: &[Vec<f64>]) -> bool {
    let n = p.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { p[i][j] } else { p[j][i] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}
