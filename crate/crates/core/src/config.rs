//! Configuration files.
//!
//! A config is a TOML document describing a polling model and, optionally,
//! scenario sections. Queue and product indices are one-based in the file
//! and zero-based in the library. The grammar is documented in
//! `docs/config.md`.

use std::fmt;
use std::ops::Range;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::model::{Discipline, Order, PollingModel, QueueSpec, Routing, SwitchoverMatrix, ValidationError};
use crate::randvar::RandVar;
use crate::scenarios::{Flow, LotPolicy, Product, SelspSpec, SignalControl, TrafficSpec};

/// Input error with a one-based source position when one is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A parsed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: Option<PollingModel>,
    pub selsp: Option<SelspSpec>,
    pub traffic: Option<TrafficSpec>,
    /// Source spans of the queue fields, for locating validation errors.
    queue_spans: Vec<QueueSpans>,
    routing_span: Option<Range<usize>>,
    switchover_span: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct QueueSpans {
    lambda: Option<Range<usize>>,
    service: Option<Range<usize>>,
    discipline: Option<Range<usize>>,
    order: Option<Range<usize>>,
}

impl Config {
    /// Normalized text of everything the config specifies; comments, layout,
    /// key order and spelled-out defaults do not affect it.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.model {
            out.push_str(&m.canonical());
        }
        if let Some(s) = &self.selsp {
            out.push_str(&s.canonical());
        }
        if let Some(t) = &self.traffic {
            out.push_str(&t.canonical());
        }
        out
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn require_model(&self) -> Result<&PollingModel, ConfigError> {
        self.model.as_ref().ok_or_else(|| plain("config has no [[queues]]"))
    }
}

/// Locates a model validation error in the source it was parsed from.
pub fn locate(config: &Config, src: &str, e: &ValidationError) -> ConfigError {
    let span = match e.field.as_str() {
        "routing" => config.routing_span.clone(),
        "switchover" => config.switchover_span.clone(),
        field => e.queue.and_then(|q| config.queue_spans.get(q)).and_then(|s| match field {
            "lambda" => s.lambda.clone(),
            "service" => s.service.clone(),
            "discipline" => s.discipline.clone(),
            "order" => s.order.clone(),
            _ => None,
        }),
    };
    match span {
        Some(r) => at(src, r, e.to_string()),
        None => plain(e.to_string()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    routing: Option<Spanned<String>>,
    table: Option<Spanned<Vec<i64>>>,
    markov: Option<Spanned<Vec<Vec<f64>>>>,
    queues: Option<Vec<RawQueue>>,
    switchover: Option<Spanned<RawSwitchover>>,
    selsp: Option<Spanned<RawSelsp>>,
    traffic: Option<Spanned<RawTraffic>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQueue {
    lambda: Spanned<f64>,
    service: Spanned<String>,
    discipline: Option<Spanned<String>>,
    order: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSwitchover {
    ring: Option<Spanned<Vec<Spanned<String>>>>,
    sweep: Option<Spanned<Vec<Spanned<String>>>>,
    turnaround: Option<Spanned<Vec<Spanned<String>>>>,
    matrix: Option<Spanned<Vec<Vec<Spanned<String>>>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSelsp {
    sequence: Option<Spanned<Vec<i64>>>,
    products: Vec<RawProduct>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProduct {
    demand: Spanned<f64>,
    production: Spanned<String>,
    setup: Spanned<String>,
    base_stock: Spanned<i64>,
    lot_policy: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraffic {
    flows: Vec<RawFlow>,
    clearance: Spanned<Vec<Spanned<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    rate: Spanned<f64>,
    headway: Spanned<String>,
    control: Option<Spanned<String>>,
}

/// One-based line and column of byte offset `pos`.
pub fn line_column(src: &str, pos: usize) -> (usize, usize) {
    let pos = pos.min(src.len());
    let before = &src[..pos];
    let line = before.matches('\n').count() + 1;
    let start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[start..].chars().count() + 1)
}

fn at(src: &str, span: Range<usize>, message: impl Into<String>) -> ConfigError {
    let (line, column) = line_column(src, span.start);
    ConfigError {
        line: Some(line),
        column: Some(column),
        message: message.into(),
    }
}

fn plain(message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        column: None,
        message: message.into(),
    }
}

fn randvar(src: &str, s: &Spanned<String>) -> Result<RandVar, ConfigError> {
    s.get_ref().parse::<RandVar>().map_err(|e| at(src, s.span(), e.to_string()))
}

fn randvars(src: &str, list: &[Spanned<String>]) -> Result<Vec<RandVar>, ConfigError> {
    list.iter().map(|s| randvar(src, s)).collect()
}

/// Splits `name(args)` into `name` and `args`.
fn call(text: &str) -> (&str, Option<&str>) {
    let t = text.trim();
    match (t.find('('), t.strip_suffix(')')) {
        (Some(open), Some(body)) => (t[..open].trim(), Some(&body[open + 1..])),
        _ => (t, None),
    }
}

fn one_based(src: &str, span: Range<usize>, value: i64, n: usize, what: &str) -> Result<usize, ConfigError> {
    if value >= 1 && (value as u64) <= n as u64 {
        Ok(value as usize - 1)
    } else {
        Err(at(src, span, format!("{what} {value} is not between 1 and {n}")))
    }
}

fn discipline<'a>(src: &str, s: &'a Spanned<String>, n: usize) -> Result<Discipline, ConfigError> {
    let bad = |m: String| at(src, s.span(), m);
    let (name, arg) = call(s.get_ref());
    let need = |a: Option<&'a str>| a.ok_or_else(|| bad(format!("`{name}` needs an argument")));
    match (name, arg) {
        ("exhaustive", None) => Ok(Discipline::Exhaustive),
        ("gated", None) => Ok(Discipline::Gated),
        ("globally-gated", a) => {
            let p: i64 = need(a)?.trim().parse().map_err(|_| bad("parent must be an integer".into()))?;
            Ok(Discipline::GloballyGated {
                parent: one_based(src, s.span(), p, n, "parent queue")?,
            })
        }
        ("k-limited", a) => {
            let k: u64 = need(a)?.trim().parse().map_err(|_| bad("k must be a positive integer".into()))?;
            Ok(Discipline::KLimited { k })
        }
        ("bernoulli", a) => {
            let p: f64 = need(a)?.trim().parse().map_err(|_| bad("p must be a number".into()))?;
            Ok(Discipline::Bernoulli { p })
        }
        ("time-limited", a) => {
            let limit = need(a)?.parse::<RandVar>().map_err(|e| bad(e.to_string()))?;
            Ok(Discipline::TimeLimited { limit })
        }
        _ => Err(bad(format!("unknown discipline `{}`", s.get_ref()))),
    }
}

fn order(src: &str, s: &Spanned<String>) -> Result<Order, ConfigError> {
    match s.get_ref().trim() {
        "fcfs" => Ok(Order::Fcfs),
        "lcfs" => Ok(Order::Lcfs),
        other => Err(at(src, s.span(), format!("unknown order `{other}` (fcfs or lcfs)"))),
    }
}

fn absent(s: &Spanned<String>) -> bool {
    s.get_ref().trim() == "-"
}

fn switchover(
    src: &str,
    raw: &Spanned<RawSwitchover>,
    n: usize,
    routing: &Routing,
) -> Result<SwitchoverMatrix, ConfigError> {
    let sw = raw.get_ref();
    let given = [sw.ring.is_some(), sw.sweep.is_some(), sw.matrix.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if given != 1 {
        return Err(at(src, raw.span(), "give exactly one of `ring`, `sweep` or `matrix`"));
    }
    let mut m = if let Some(ring) = &sw.ring {
        if ring.get_ref().len() != n {
            return Err(at(src, ring.span(), format!("`ring` needs {n} entries")));
        }
        SwitchoverMatrix::ring(randvars(src, ring.get_ref())?)
    } else if let Some(sweep) = &sw.sweep {
        if !matches!(routing, Routing::Elevator) {
            return Err(at(src, sweep.span(), "`sweep` applies to elevator routing only"));
        }
        if sweep.get_ref().len() + 1 != n {
            return Err(at(src, sweep.span(), format!("`sweep` needs {} entries", n - 1)));
        }
        let legs = randvars(src, sweep.get_ref())?;
        let mut m = SwitchoverMatrix::empty(n);
        for (i, s) in legs.into_iter().enumerate() {
            m.set(i, i + 1, s.clone());
            m.set(i + 1, i, s);
        }
        m
    } else {
        let rows = sw.matrix.as_ref().expect("one form is present");
        if rows.get_ref().len() != n || rows.get_ref().iter().any(|r| r.len() != n) {
            return Err(at(src, rows.span(), format!("`matrix` must be {n} by {n}")));
        }
        let mut m = SwitchoverMatrix::empty(n);
        for (i, row) in rows.get_ref().iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if !absent(cell) {
                    m.set(i, j, randvar(src, cell)?);
                }
            }
        }
        m
    };
    if let Some(turn) = &sw.turnaround {
        if !matches!(routing, Routing::Elevator) {
            return Err(at(src, turn.span(), "`turnaround` applies to elevator routing only"));
        }
        let list = turn.get_ref();
        if list.len() != 2 {
            return Err(at(src, turn.span(), "`turnaround` needs two entries (bottom, top)"));
        }
        m.set(0, 0, randvar(src, &list[0])?);
        m.set(n - 1, n - 1, randvar(src, &list[1])?);
    }
    Ok(m)
}

fn model(src: &str, raw: &RawConfig, queues: &[RawQueue]) -> Result<(PollingModel, Vec<QueueSpans>), ConfigError> {
    let n = queues.len();
    if n == 0 {
        return Err(plain("at least one [[queues]] entry is required"));
    }
    let routing_name = raw.routing.as_ref().map_or("cyclic", |r| r.get_ref().as_str());
    let routing_span = raw.routing.as_ref().map_or(0..0, |r| r.span());
    let routing = match routing_name {
        "cyclic" => Routing::Cyclic,
        "elevator" => Routing::Elevator,
        "table" => {
            let t = raw
                .table
                .as_ref()
                .ok_or_else(|| at(src, routing_span.clone(), "table routing needs `table = [...]`"))?;
            let seq = t
                .get_ref()
                .iter()
                .map(|&q| one_based(src, t.span(), q, n, "table entry"))
                .collect::<Result<_, _>>()?;
            Routing::Table(seq)
        }
        "markovian" => {
            let p = raw
                .markov
                .as_ref()
                .ok_or_else(|| at(src, routing_span.clone(), "markovian routing needs `markov = [[...]]`"))?;
            Routing::Markovian(p.get_ref().clone())
        }
        other => {
            return Err(at(
                src,
                routing_span,
                format!("unknown routing `{other}` (cyclic, table, markovian or elevator)"),
            ))
        }
    };
    if let (Some(t), false) = (&raw.table, matches!(routing, Routing::Table(_))) {
        return Err(at(src, t.span(), "`table` is only used with table routing"));
    }
    if let (Some(p), false) = (&raw.markov, matches!(routing, Routing::Markovian(_))) {
        return Err(at(src, p.span(), "`markov` is only used with markovian routing"));
    }
    let mut specs = Vec::with_capacity(n);
    let mut spans = Vec::with_capacity(n);
    for q in queues {
        let d = match &q.discipline {
            Some(d) => discipline(src, d, n)?,
            None => Discipline::Exhaustive,
        };
        let o = match &q.order {
            Some(o) => order(src, o)?,
            None => Order::Fcfs,
        };
        specs.push(QueueSpec::new(*q.lambda.get_ref(), randvar(src, &q.service)?, d).with_order(o));
        spans.push(QueueSpans {
            lambda: Some(q.lambda.span()),
            service: Some(q.service.span()),
            discipline: q.discipline.as_ref().map(|d| d.span()),
            order: q.order.as_ref().map(|o| o.span()),
        });
    }
    let sw = raw
        .switchover
        .as_ref()
        .ok_or_else(|| plain("a [switchover] section is required"))?;
    let switchover = switchover(src, sw, n, &routing)?;
    Ok((
        PollingModel {
            queues: specs,
            switchover,
            routing,
        },
        spans,
    ))
}

fn lot_policy(src: &str, s: &Spanned<String>) -> Result<LotPolicy, ConfigError> {
    let bad = |m: String| at(src, s.span(), m);
    match call(s.get_ref()) {
        ("exhaustive", None) => Ok(LotPolicy::Exhaustive),
        ("gated", None) => Ok(LotPolicy::Gated),
        ("k-limited", Some(k)) => k
            .trim()
            .parse()
            .map(LotPolicy::KLimited)
            .map_err(|_| bad("k must be a positive integer".into())),
        _ => Err(bad(format!("unknown lot policy `{}` (exhaustive, gated, k-limited(k))", s.get_ref()))),
    }
}

fn selsp(src: &str, raw: &Spanned<RawSelsp>) -> Result<SelspSpec, ConfigError> {
    let r = raw.get_ref();
    let n = r.products.len();
    if n == 0 {
        return Err(at(src, raw.span(), "[selsp] needs at least one [[selsp.products]] entry"));
    }
    let mut products = Vec::with_capacity(n);
    for p in &r.products {
        let b = *p.base_stock.get_ref();
        if b < 0 {
            return Err(at(src, p.base_stock.span(), "base_stock must be nonnegative"));
        }
        let d = *p.demand.get_ref();
        if !(d.is_finite() && d >= 0.0) {
            return Err(at(src, p.demand.span(), "demand must be a nonnegative rate"));
        }
        products.push(Product {
            demand: d,
            production: randvar(src, &p.production)?,
            setup: randvar(src, &p.setup)?,
            base_stock: b as u64,
            lot_policy: match &p.lot_policy {
                Some(l) => lot_policy(src, l)?,
                None => LotPolicy::Exhaustive,
            },
        });
    }
    let sequence = match &r.sequence {
        Some(s) => s
            .get_ref()
            .iter()
            .map(|&p| one_based(src, s.span(), p, n, "sequence entry"))
            .collect::<Result<Vec<_>, _>>()?,
        None => (0..n).collect(),
    };
    if let Some(s) = &r.sequence {
        if let Some(missing) = (0..n).find(|p| !sequence.contains(p)) {
            return Err(at(src, s.span(), format!("product {} is missing from the sequence", missing + 1)));
        }
    }
    Ok(SelspSpec { products, sequence })
}

fn signal_control(src: &str, s: &Spanned<String>) -> Result<SignalControl, ConfigError> {
    let bad = |m: String| at(src, s.span(), m);
    match call(s.get_ref()) {
        ("exhaustive", None) => Ok(SignalControl::Exhaustive),
        ("k-limited", Some(k)) => k
            .trim()
            .parse()
            .map(SignalControl::KLimited)
            .map_err(|_| bad("k must be a positive integer".into())),
        ("time-limited", Some(l)) => l
            .parse::<RandVar>()
            .map(SignalControl::TimeLimited)
            .map_err(|e| bad(e.to_string())),
        _ => Err(bad(format!(
            "unknown control `{}` (exhaustive, k-limited(k), time-limited(dist))",
            s.get_ref()
        ))),
    }
}

fn traffic(src: &str, raw: &Spanned<RawTraffic>) -> Result<TrafficSpec, ConfigError> {
    let r = raw.get_ref();
    if r.flows.is_empty() {
        return Err(at(src, raw.span(), "[traffic] needs at least one [[traffic.flows]] entry"));
    }
    let mut flows = Vec::with_capacity(r.flows.len());
    for f in &r.flows {
        let rate = *f.rate.get_ref();
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(at(src, f.rate.span(), "rate must be a nonnegative number"));
        }
        let control = match &f.control {
            Some(c) => signal_control(src, c)?,
            None => SignalControl::Exhaustive,
        };
        if let SignalControl::KLimited(0) = control {
            return Err(at(src, f.control.as_ref().expect("parsed").span(), "k must be at least 1"));
        }
        flows.push(Flow {
            rate,
            headway: randvar(src, &f.headway)?,
            control,
        });
    }
    let clearance = randvars(src, r.clearance.get_ref())?;
    if clearance.len() != flows.len() {
        return Err(at(
            src,
            r.clearance.span(),
            format!("`clearance` needs {} entries, one per flow", flows.len()),
        ));
    }
    if let Some(i) = clearance.iter().position(|c| c.mean() <= 0.0) {
        return Err(at(src, r.clearance.get_ref()[i].span(), "clearance times need a positive mean"));
    }
    Ok(TrafficSpec { flows, clearance })
}

/// Parses a config document. Structural problems of the model itself (for
/// example a Markov matrix that is not stochastic) are left to
/// [`PollingModel::validate`]; use [`locate`] to position those errors.
pub fn parse(src: &str) -> Result<Config, ConfigError> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| match e.span() {
        Some(span) => at(src, span, e.message().trim().to_string()),
        None => plain(e.message().trim().to_string()),
    })?;
    let (model, queue_spans) = match &raw.queues {
        Some(q) => {
            let (m, s) = model(src, &raw, q)?;
            (Some(m), s)
        }
        None => {
            if let Some(sw) = &raw.switchover {
                return Err(at(src, sw.span(), "[switchover] without [[queues]]"));
            }
            if let Some(r) = &raw.routing {
                return Err(at(src, r.span(), "`routing` without [[queues]]"));
            }
            (None, Vec::new())
        }
    };
    let selsp = raw.selsp.as_ref().map(|s| selsp(src, s)).transpose()?;
    let traffic = raw.traffic.as_ref().map(|t| traffic(src, t)).transpose()?;
    if model.is_none() && selsp.is_none() && traffic.is_none() {
        return Err(plain("config describes nothing: add [[queues]], [selsp] or [traffic]"));
    }
    Ok(Config {
        model,
        selsp,
        traffic,
        queue_spans,
        routing_span: raw
            .table
            .as_ref()
            .map(|t| t.span())
            .or_else(|| raw.markov.as_ref().map(|m| m.span()))
            .or_else(|| raw.routing.as_ref().map(|r| r.span())),
        switchover_span: raw.switchover.as_ref().map(|s| s.span()),
    })
}
