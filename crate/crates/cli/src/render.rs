//! Fixed-width text tables.

use std::fmt::Write;

use polling_core::exact::{ExactReport, PclStatus};
use polling_core::scenarios::{BaseStock, SelspReport, TrafficReport};
use polling_core::sim::{Estimate, SimReport};

use crate::records::SimHeader;

const W: usize = 12;

fn num(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let a = x.abs();
    if a != 0.0 && !(1e-4..1e7).contains(&a) {
        format!("{x:.4e}")
    } else {
        format!("{x:.6}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), num)
}

fn est(e: Option<Estimate>) -> (String, String) {
    match e {
        Some(e) => (num(e.mean), num(e.half_width)),
        None => ("-".to_string(), "-".to_string()),
    }
}

fn row(out: &mut String, first: &str, cells: &[String]) {
    let _ = write!(out, "{first:<6}");
    for c in cells {
        let _ = write!(out, " {c:>W$}");
    }
    out.push('\n');
}

fn header(out: &mut String, first: &str, names: &[&str]) {
    let cells: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    row(out, first, &cells);
    let width = 6 + names.len() * (W + 1);
    out.push_str(&"-".repeat(width));
    out.push('\n');
}

pub fn pcl_line(p: &PclStatus) -> String {
    match p {
        PclStatus::Checked { residual, residual_rel } => format!(
            "PCL residual {} (relative {}) {}",
            num(*residual),
            num(*residual_rel),
            if p.passes() == Some(true) { "ok" } else { "FAILED" }
        ),
        PclStatus::NotApplicable { reason } => format!("PCL not applicable: {reason}"),
    }
}

pub fn exact(fingerprint: &str, r: &ExactReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model {fingerprint}  exact analysis");
    let _ = writeln!(out, "rho {}  E[C] {}", num(r.rho), num(r.basics.mean_cycle));
    out.push('\n');
    header(&mut out, "queue", &["rho_i", "E[V_i]", "E[I_i]", "E[W_i]", "E[L_i]"]);
    for i in 0..r.rho_i.len() {
        row(
            &mut out,
            &(i + 1).to_string(),
            &[
                num(r.rho_i[i]),
                num(r.basics.mean_visit[i]),
                num(r.basics.mean_intervisit[i]),
                opt(r.mean_wait[i]),
                num(r.mean_queue[i]),
            ],
        );
    }
    out.push('\n');
    out.push_str(&pcl_line(&r.pcl));
    out.push('\n');
    out
}

pub fn sim(h: &SimHeader, r: &SimReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model {}  simulation  seed {}  horizon {}  warmup {}  replications {}",
        h.fingerprint,
        h.seed,
        h.horizon,
        h.warmup,
        r.replications()
    );
    let _ = writeln!(
        out,
        "busy {}  switching {}  idle {}  events {}{}",
        num(r.busy_fraction),
        num(r.switch_fraction),
        num(r.idle_fraction),
        r.total_events,
        if r.truncated { "  (truncated at the event limit)" } else { "" }
    );
    out.push('\n');
    header(&mut out, "queue", &["served", "E[W_i]", "+-95%", "E[L_i]", "+-95%", "E[C_i]", "Var[W_i]"]);
    for (i, q) in r.queues.iter().enumerate() {
        let (w, wh) = est(q.mean_wait);
        let (l, lh) = est(q.mean_queue);
        let (c, _) = est(q.mean_cycle);
        row(&mut out, &(i + 1).to_string(), &[q.served.to_string(), w, wh, l, lh, c, opt(q.wait_variance)]);
    }
    out
}

/// One comparison line per queue: exact, simulated, interval, z-score.
pub struct Comparison {
    pub exact: Option<f64>,
    pub sim: Option<Estimate>,
    pub z: Option<f64>,
    pub ok: bool,
}

pub fn validation(fingerprint: &str, rows: &[Comparison], pcl: Option<&PclStatus>, skipped: Option<&str>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model {fingerprint}  exact vs simulation");
    if let Some(reason) = skipped {
        let _ = writeln!(out, "exact side skipped: {reason}");
    }
    out.push('\n');
    header(&mut out, "queue", &["exact E[W_i]", "sim E[W_i]", "+-95%", "z", "status"]);
    for (i, c) in rows.iter().enumerate() {
        let (m, h) = est(c.sim);
        let status = match (c.exact, c.ok) {
            (None, _) => "-",
            (Some(_), true) => "ok",
            (Some(_), false) => "FAILED",
        };
        row(
            &mut out,
            &(i + 1).to_string(),
            &[opt(c.exact), m, h, c.z.map_or_else(|| "-".to_string(), |z| format!("{z:.3}")), status.to_string()],
        );
    }
    if let Some(p) = pcl {
        out.push('\n');
        out.push_str(&pcl_line(p));
        out.push('\n');
    }
    out
}

pub fn selsp(fingerprint: &str, r: &SelspReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "config {fingerprint}  base-stock evaluation  rho {}", num(r.rho));
    out.push('\n');
    header(
        &mut out,
        "item",
        &["b_i", "E[L_i] exact", "E[L_i] sim", "+-95%", "E[N_i]", "fill sim", "fill exact"],
    );
    for (i, p) in r.products.iter().enumerate() {
        let (s, sh) = est(p.simulated_shortfall);
        row(
            &mut out,
            &(i + 1).to_string(),
            &[
                p.base_stock.to_string(),
                opt(p.exact_shortfall),
                s,
                sh,
                num(p.net_stock),
                opt(p.fill_rate),
                opt(p.exact_fill_rate),
            ],
        );
    }
    out
}

pub fn basestock(fingerprint: &str, target: f64, rows: &[BaseStock]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "config {fingerprint}  base-stock search  target fill {target}");
    out.push('\n');
    header(&mut out, "item", &["b_i", "fill rate"]);
    for (i, b) in rows.iter().enumerate() {
        let level = if b.lower_bound {
            format!(">={}", b.base_stock)
        } else {
            b.base_stock.to_string()
        };
        row(&mut out, &(i + 1).to_string(), &[level, num(b.fill_rate)]);
    }
    if rows.iter().any(|b| b.lower_bound) {
        out.push_str("\n>= marks products whose target lies beyond the recorded shortfall range\n");
    }
    out
}

pub fn traffic(fingerprint: &str, r: &TrafficReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "config {fingerprint}  signal delays  rho {}", num(r.rho));
    out.push('\n');
    header(&mut out, "flow", &["exact delay", "sim delay", "+-95%", "overflow"]);
    for (i, f) in r.flows.iter().enumerate() {
        let (d, dh) = est(f.simulated_delay);
        row(&mut out, &(i + 1).to_string(), &[opt(f.exact_delay), d, dh, opt(f.overflow)]);
    }
    out
}
