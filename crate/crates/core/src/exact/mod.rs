//! Exact steady-state analysis of cyclic polling systems with exhaustive,
//! gated and globally gated service.
//!
//! The pipeline is:
//!
//! 1. mean cycle, visit and intervisit times from the load balance
//!    `E[S] = (1 - rho) E[C]`;
//! 2. first and second factorial moments of the joint queue lengths at every
//!    visit beginning and completion, from the laws of motion (see
//!    [`cycle`]), solved as dense linear systems;
//! 3. the marginal queue-length PGF through the Fuhrmann-Cooper
//!    decomposition, and mean waiting times through the distributional
//!    form of Little's law;
//! 4. the pseudo-conservation law as an independent check on step 3.

mod cycle;
mod linalg;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::model::{Discipline, Order, Routing, Stability, ValidatedModel};
use crate::randvar::RandVar;

use cycle::{Cycle, Epoch, Moments};
use linalg::Lu;

/// Condition numbers above this are logged.
pub const CONDITION_WARN: f64 = 1e10;
/// Condition numbers above this make the moment systems unusable.
pub const CONDITION_FAIL: f64 = 1e15;
/// Pseudo-conservation residual budget.
pub const PCL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExactError {
    #[error("system is unstable: rho = {rho} >= 1")]
    Unstable { rho: f64 },
    #[error("total switch-over time is zero; exact analysis needs E[S] > 0")]
    ZeroSwitchover,
    #[error("exact analysis supports cyclic routing only, got {0}")]
    UnsupportedRouting(&'static str),
    #[error("queue {} uses {discipline} service, which has no exact analysis; use the simulator", queue + 1)]
    UnsupportedDiscipline { queue: usize, discipline: String },
    #[error("queue {} has no arrivals, so its waiting time is undefined", queue + 1)]
    NoArrivals { queue: usize },
    #[error("queue {} is served LCFS; the waiting-time transform identity needs FCFS", queue + 1)]
    LcfsOrder { queue: usize },
    #[error("argument out of range: {0}")]
    Domain(String),
    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("singular moment system ({unknowns} unknowns, condition estimate {condition:e})")]
    Singular { unknowns: usize, condition: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasicQuantities {
    pub mean_cycle: f64,
    pub mean_visit: Vec<f64>,
    pub mean_intervisit: Vec<f64>,
}

/// Joint queue-length moments at one embedded epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMoments {
    /// `E[L_j]` for every queue `j`.
    pub mean: Vec<f64>,
    /// Row-major `E[L_j (L_k - delta_jk)]`.
    pub factorial: Vec<f64>,
}

impl EpochMoments {
    pub fn m(&self, j: usize) -> f64 {
        self.mean[j]
    }

    pub fn q(&self, j: usize, k: usize) -> f64 {
        self.factorial[j * self.mean.len() + k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentTable {
    /// Indexed by the visited queue `i`: moments at the beginning of a
    /// visit to `i`.
    pub visit_begin: Vec<EpochMoments>,
    pub visit_end: Vec<EpochMoments>,
    /// Condition estimate of the second-moment system.
    pub condition: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CycleSecondMoment {
    /// `E[C_i^2]`, cycle between visit beginnings (gated queues).
    Beginnings(f64),
    /// `E[C*_i^2]`, cycle between visit completions (exhaustive queues);
    /// back-computed from the mean wait, not an independent quantity.
    Completions(f64),
    /// `E[C_p^2]` of the globally gated parent cycle.
    Parent(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PclStatus {
    Checked { residual: f64, residual_rel: f64 },
    NotApplicable { reason: String },
}

impl PclStatus {
    pub fn passes(&self) -> Option<bool> {
        match self {
            PclStatus::Checked { residual_rel, .. } => Some(*residual_rel <= PCL_TOL),
            PclStatus::NotApplicable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactReport {
    pub rho_i: Vec<f64>,
    pub rho: f64,
    pub basics: BasicQuantities,
    /// Mean waiting time excluding service; absent for queues without
    /// arrivals.
    pub mean_wait: Vec<Option<f64>>,
    /// Mean number in system.
    pub mean_queue: Vec<f64>,
    pub cycle_second_moment: Vec<Option<CycleSecondMoment>>,
    pub moments: MomentTable,
    pub pcl: PclStatus,
}

/// Checks the preconditions shared by every exact operation.
pub fn check_supported(model: &ValidatedModel) -> Result<(), ExactError> {
    let m = model.model();
    if m.routing != Routing::Cyclic {
        return Err(ExactError::UnsupportedRouting(m.routing.name()));
    }
    if let Some((i, q)) = m
        .queues
        .iter()
        .enumerate()
        .find(|(_, q)| !q.discipline.is_branching())
    {
        return Err(ExactError::UnsupportedDiscipline {
            queue: i,
            discipline: q.discipline.to_string(),
        });
    }
    if model.stability() == Stability::Unstable {
        return Err(ExactError::Unstable { rho: model.load().rho });
    }
    if !(model.load().mean_switchover.unwrap_or(0.0) > 0.0) {
        return Err(ExactError::ZeroSwitchover);
    }
    Ok(())
}

pub fn basic_quantities(model: &ValidatedModel) -> Result<BasicQuantities, ExactError> {
    check_supported(model)?;
    let load = model.load();
    let es = load.mean_switchover.expect("cyclic routing has a switch-over total");
    let mean_cycle = es / (1.0 - load.rho);
    Ok(BasicQuantities {
        mean_cycle,
        mean_visit: load.rho_i.iter().map(|r| r * mean_cycle).collect(),
        mean_intervisit: load.rho_i.iter().map(|r| (1.0 - r) * mean_cycle).collect(),
    })
}

/// Busy-period LST `pi(omega)` of an M/G/1 queue with the given arrival
/// rate and service time.
pub fn busy_period_lst(service: &RandVar, lambda: f64, omega: f64) -> Result<f64, ExactError> {
    if !(omega >= 0.0) {
        return Err(ExactError::Domain(format!("omega must be nonnegative, got {omega}")));
    }
    let rho = lambda * service.mean();
    if !(rho < 1.0) {
        return Err(ExactError::Unstable { rho });
    }
    Ok(cycle::busy_period_laplace(service, lambda, Complex64::new(omega, 0.0))?.re)
}

/// Exact analysis of one validated model. Construction solves the moment
/// systems; everything else is evaluated on demand.
pub struct Analysis {
    model: ValidatedModel,
    cycle: Cycle,
    basics: BasicQuantities,
    moments: MomentTable,
}

impl Analysis {
    pub fn new(model: &ValidatedModel) -> Result<Self, ExactError> {
        let basics = basic_quantities(model)?;
        let mut cycle = Cycle::build(model);
        let moments = solve_moments(&mut cycle)?;
        Ok(Self {
            model: model.clone(),
            cycle,
            basics,
            moments,
        })
    }

    pub fn basics(&self) -> &BasicQuantities {
        &self.basics
    }

    pub fn moments(&self) -> &MomentTable {
        &self.moments
    }

    pub fn model(&self) -> &ValidatedModel {
        &self.model
    }

    fn check_queue(&self, i: usize) -> Result<(), ExactError> {
        if i >= self.model.n() {
            return Err(ExactError::Domain(format!("queue index {i} out of range")));
        }
        Ok(())
    }

    pub fn busy_period_lst(&self, i: usize, omega: f64) -> Result<f64, ExactError> {
        self.check_queue(i)?;
        let q = self.model.queue(i);
        busy_period_lst(&q.service, q.lambda, omega)
    }

    /// Offspring PGF `h_i(z)` of a gated or exhaustive queue.
    pub fn branching_pgf(&self, i: usize, z: &[f64]) -> Result<f64, ExactError> {
        self.check_queue(i)?;
        let n = self.model.n();
        if z.len() != n || z.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(ExactError::Domain(format!("z must be a vector in [0,1]^{n}")));
        }
        let q = self.model.queue(i);
        let lambdas = self.model.model().queues.iter().map(|q| q.lambda);
        match q.discipline {
            Discipline::Gated => {
                let s: f64 = lambdas.zip(z).map(|(l, zj)| l * (1.0 - zj)).sum();
                Ok(q.service.lst(s).expect("nonnegative argument"))
            }
            Discipline::Exhaustive => {
                let s: f64 = lambdas
                    .zip(z)
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, (l, zj))| l * (1.0 - zj))
                    .sum();
                busy_period_lst(&q.service, q.lambda, s)
            }
            _ => Err(ExactError::UnsupportedDiscipline {
                queue: i,
                discipline: q.discipline.to_string(),
            }),
        }
    }

    /// Fuhrmann-Cooper form of the marginal queue-length PGF at a complex
    /// argument in the closed unit disk.
    pub fn marginal_ql_pgf_complex(&self, i: usize, z: Complex64) -> Result<Complex64, ExactError> {
        self.check_queue(i)?;
        let one = Complex64::new(1.0, 0.0);
        let q = self.model.queue(i);
        if z == one || q.lambda == 0.0 {
            return Ok(one);
        }
        let lambda = q.lambda;
        let rho_i = self.model.load().rho_i[i];
        let b = q.service.laplace((one - z) * lambda);
        let mg1 = (one - z) * b * (1.0 - rho_i) / (b - z);
        let begin = self.cycle.position(Epoch::VisitBegin(i));
        let end = self.cycle.position(Epoch::VisitEnd(i));
        let lb = self.cycle.marginal_pgf(begin, i, z)?;
        let lc = self.cycle.marginal_pgf(end, i, z)?;
        let intervisit = (lc - lb) / ((one - z) * (lambda * self.basics.mean_intervisit[i]));
        Ok(mg1 * intervisit)
    }

    pub fn marginal_ql_pgf(&self, i: usize, z: f64) -> Result<f64, ExactError> {
        if !(0.0..=1.0).contains(&z) {
            return Err(ExactError::Domain(format!("z must lie in [0,1], got {z}")));
        }
        Ok(self.marginal_ql_pgf_complex(i, Complex64::new(z, 0.0))?.re)
    }

    /// PGF of the number of queue-`i` customers at a visit beginning
    /// (`end = false`) or completion (`end = true`) of queue `i`.
    pub fn epoch_pgf(&self, i: usize, end: bool, z: f64) -> Result<f64, ExactError> {
        self.check_queue(i)?;
        let epoch = if end { Epoch::VisitEnd(i) } else { Epoch::VisitBegin(i) };
        let pos = self.cycle.position(epoch);
        Ok(self.cycle.marginal_pgf(pos, i, Complex64::new(z, 0.0))?.re)
    }

    /// `P(L_i = k)` for `k = 0..=max_level` by a Cauchy integral of the
    /// marginal PGF over a circle inside the unit disk.
    pub fn queue_length_masses(&self, i: usize, max_level: usize) -> Result<Vec<f64>, ExactError> {
        const MAX_LEVEL: usize = 20;
        const POINTS: usize = 512;
        const RADIUS: f64 = 0.9;
        if max_level > MAX_LEVEL {
            return Err(ExactError::Domain(format!(
                "point masses are available up to level {MAX_LEVEL}"
            )));
        }
        let values: Vec<Complex64> = (0..POINTS)
            .map(|m| {
                let theta = 2.0 * std::f64::consts::PI * m as f64 / POINTS as f64;
                self.marginal_ql_pgf_complex(i, Complex64::from_polar(RADIUS, theta))
            })
            .collect::<Result<_, _>>()?;
        Ok((0..=max_level)
            .map(|k| {
                let sum = values
                    .iter()
                    .enumerate()
                    .map(|(m, v)| {
                        let theta = -2.0 * std::f64::consts::PI * (k * m % POINTS) as f64 / POINTS as f64;
                        v * Complex64::from_polar(1.0, theta)
                    })
                    .fold(Complex64::new(0.0, 0.0), |a, b| a + b);
                (sum.re / (POINTS as f64 * RADIUS.powi(k as i32))).max(0.0)
            })
            .collect())
    }

    /// Waiting-time LST (service excluded) by the distributional form of
    /// Little's law.
    pub fn waiting_lst(&self, i: usize, omega: f64) -> Result<f64, ExactError> {
        self.check_queue(i)?;
        let q = self.model.queue(i);
        if q.lambda == 0.0 {
            return Err(ExactError::NoArrivals { queue: i });
        }
        if q.order == Order::Lcfs {
            return Err(ExactError::LcfsOrder { queue: i });
        }
        if !(omega >= 0.0) {
            return Err(ExactError::Domain(format!("omega must be nonnegative, got {omega}")));
        }
        let z = 1.0 - omega / q.lambda;
        if z < 0.0 {
            return Err(ExactError::Domain(format!(
                "omega = {omega} exceeds lambda = {}: PGF argument {z} is negative",
                q.lambda
            )));
        }
        if omega == 0.0 {
            return Ok(1.0);
        }
        let l = self.marginal_ql_pgf(i, z)?;
        Ok(l / q.service.lst(omega).expect("nonnegative omega"))
    }

    /// `E[L_i]` from the derivative of the Fuhrmann-Cooper decomposition.
    fn mean_number(&self, i: usize) -> f64 {
        let q = self.model.queue(i);
        let lambda = q.lambda;
        if lambda == 0.0 {
            return 0.0;
        }
        let rho_i = self.model.load().rho_i[i];
        let mg1 = rho_i + lambda * lambda * q.service.moment2() / (2.0 * (1.0 - rho_i));
        let qb = self.moments.visit_begin[i].q(i, i);
        let qc = self.moments.visit_end[i].q(i, i);
        mg1 + (qb - qc) / (2.0 * lambda * self.basics.mean_intervisit[i])
    }

    pub fn report(&self) -> ExactReport {
        let n = self.model.n();
        let load = self.model.load();
        let mean_queue: Vec<f64> = (0..n).map(|i| self.mean_number(i)).collect();
        let mean_wait: Vec<Option<f64>> = (0..n)
            .map(|i| {
                let q = self.model.queue(i);
                (q.lambda > 0.0).then(|| mean_queue[i] / q.lambda - q.service.mean())
            })
            .collect();
        let ec = self.basics.mean_cycle;
        let parent_cycle = self.parent_cycle_moment();
        let cycle_second_moment = (0..n)
            .map(|i| {
                let q = self.model.queue(i);
                match q.discipline {
                    Discipline::Gated if q.lambda > 0.0 => Some(CycleSecondMoment::Beginnings(
                        self.moments.visit_begin[i].q(i, i) / (q.lambda * q.lambda),
                    )),
                    Discipline::Exhaustive => mean_wait[i].map(|w| {
                        CycleSecondMoment::Completions(2.0 * ec * w / (1.0 - load.rho_i[i]))
                    }),
                    Discipline::GloballyGated { .. } => parent_cycle.map(CycleSecondMoment::Parent),
                    _ => None,
                }
            })
            .collect();
        let pcl = pcl_check(&self.model, &mean_wait);
        ExactReport {
            rho_i: load.rho_i.clone(),
            rho: load.rho,
            basics: self.basics.clone(),
            mean_wait,
            mean_queue,
            cycle_second_moment,
            moments: self.moments.clone(),
            pcl,
        }
    }

    /// Second moment of the parent cycle of globally gated queues. Closed
    /// form when every queue is globally gated; otherwise read from the
    /// gated-in population at the parent's visit beginning, which is the
    /// Poisson count of arrivals over one parent cycle.
    fn parent_cycle_moment(&self) -> Option<f64> {
        let m = self.model.model();
        let parent = m.queues.iter().find_map(|q| match q.discipline {
            Discipline::GloballyGated { parent } => Some(parent),
            _ => None,
        })?;
        if m.queues
            .iter()
            .all(|q| matches!(q.discipline, Discipline::GloballyGated { .. }))
        {
            let (es, es2) = m.total_switchover_moments()?;
            let rho = self.model.load().rho;
            let ec = self.basics.mean_cycle;
            let work2: f64 = m.queues.iter().map(|q| q.lambda * q.service.moment2()).sum();
            return Some((ec * work2 + 2.0 * rho * ec * es + es2) / (1.0 - rho * rho));
        }
        m.queues.iter().enumerate().find_map(|(j, q)| {
            (matches!(q.discipline, Discipline::GloballyGated { .. }) && q.lambda > 0.0)
                .then(|| self.moments.visit_begin[parent].q(j, j) / (q.lambda * q.lambda))
        })
    }
}

fn solve_moments(cycle: &mut Cycle) -> Result<MomentTable, ExactError> {
    let d = cycle.dims;

    // First moments: m = K m + b at the start of the cycle.
    let b = cycle.cycle_mean(&vec![0.0; d]);
    let mut a = vec![0.0; d * d];
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        let col = cycle.cycle_mean(&e);
        for j in 0..d {
            a[j * d + k] = -(col[j] - b[j]);
        }
        a[k * d + k] += 1.0;
    }
    let lu = Lu::factor(d, a).map_err(|_| ExactError::Singular {
        unknowns: d,
        condition: f64::INFINITY,
    })?;
    let cond1 = lu.condition_estimate();
    check_condition(d, cond1)?;
    let mean = lu.solve(&b);
    cycle.attach_means(&mean);

    // Second moments: with the start mean fixed, the cycle is affine in the
    // symmetric second-moment matrix; unknowns are its upper triangle.
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|j| (j..d).map(move |k| (j, k))).collect();
    let u = pairs.len();
    let c = cycle.cycle_second(&mean, &vec![0.0; d * d]);
    let c_sym: Vec<f64> = pairs.iter().map(|&(j, k)| c[j * d + k]).collect();
    let mut a2 = vec![0.0; u * u];
    for (col_idx, &(j, k)) in pairs.iter().enumerate() {
        let mut basis = vec![0.0; d * d];
        basis[j * d + k] = 1.0;
        basis[k * d + j] = 1.0;
        let img = cycle.cycle_second(&mean, &basis);
        for (row_idx, &(r, s)) in pairs.iter().enumerate() {
            a2[row_idx * u + col_idx] = -(img[r * d + s] - c[r * d + s]);
        }
        a2[col_idx * u + col_idx] += 1.0;
    }
    let lu2 = Lu::factor(u, a2).map_err(|_| ExactError::Singular {
        unknowns: u,
        condition: f64::INFINITY,
    })?;
    let cond2 = lu2.condition_estimate();
    check_condition(u, cond2)?;
    let upper = lu2.solve(&c_sym);
    let mut second = vec![0.0; d * d];
    for (&(j, k), v) in pairs.iter().zip(&upper) {
        second[j * d + k] = *v;
        second[k * d + j] = *v;
    }

    let n = cycle.n();
    let mut visit_begin = vec![None; n];
    let mut visit_end = vec![None; n];
    for (epoch, m) in cycle.trace(&Moments { mean, second }) {
        let em = aggregate(cycle, &m);
        match epoch {
            Epoch::VisitBegin(i) => visit_begin[i] = Some(em),
            Epoch::VisitEnd(i) => visit_end[i] = Some(em),
        }
    }
    Ok(MomentTable {
        visit_begin: visit_begin.into_iter().map(Option::unwrap).collect(),
        visit_end: visit_end.into_iter().map(Option::unwrap).collect(),
        condition: cond1.max(cond2),
    })
}

fn check_condition(unknowns: usize, condition: f64) -> Result<(), ExactError> {
    if !(condition < CONDITION_FAIL) {
        return Err(ExactError::Singular { unknowns, condition });
    }
    if condition > CONDITION_WARN {
        log::warn!("moment system with {unknowns} unknowns is ill-conditioned (estimate {condition:e})");
    }
    Ok(())
}

/// Sums components into per-queue totals and converts raw second moments
/// to factorial moments, clamping rounding noise below zero.
fn aggregate(cycle: &Cycle, m: &Moments) -> EpochMoments {
    let n = cycle.n();
    let d = cycle.dims;
    let mut mean = vec![0.0; n];
    let mut raw = vec![0.0; n * n];
    for a in 0..d {
        let qa = cycle.queue_of[a];
        mean[qa] += m.mean[a];
        for b in 0..d {
            raw[qa * n + cycle.queue_of[b]] += m.second[a * d + b];
        }
    }
    let scale = mean.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let clean = |v: f64| if v.abs() < 1e-13 * scale * scale { 0.0 } else { v };
    let mut factorial = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let mut v = raw[j * n + k];
            if j == k {
                v -= mean[j];
            }
            factorial[j * n + k] = clean(v).max(0.0);
        }
    }
    EpochMoments {
        mean: mean.into_iter().map(|v| clean(v).max(0.0)).collect(),
        factorial,
    }
}

/// Pseudo-conservation law check for exhaustive/gated mixes.
pub fn pcl_check(model: &ValidatedModel, mean_wait: &[Option<f64>]) -> PclStatus {
    let m = model.model();
    if m.routing != Routing::Cyclic {
        return PclStatus::NotApplicable {
            reason: "routing is not cyclic".to_string(),
        };
    }
    if let Some((i, q)) = m
        .queues
        .iter()
        .enumerate()
        .find(|(_, q)| !matches!(q.discipline, Discipline::Exhaustive | Discipline::Gated))
    {
        return PclStatus::NotApplicable {
            reason: format!(
                "no work-left-behind term for {} service at queue {}",
                q.discipline,
                i + 1
            ),
        };
    }
    let Some((es, es2)) = m.total_switchover_moments() else {
        return PclStatus::NotApplicable {
            reason: "no cycle switch-over".to_string(),
        };
    };
    let load = model.load();
    let rho = load.rho;
    let mut lhs = 0.0;
    for i in 0..m.n() {
        if load.rho_i[i] > 0.0 {
            match mean_wait.get(i).copied().flatten() {
                Some(w) => lhs += load.rho_i[i] * w,
                None => {
                    return PclStatus::NotApplicable {
                        reason: format!("no mean wait for queue {}", i + 1),
                    }
                }
            }
        }
    }
    let work2: f64 = m.queues.iter().map(|q| q.lambda * q.service.moment2()).sum();
    let sum_sq: f64 = load.rho_i.iter().map(|r| r * r).sum();
    let left_behind: f64 = m
        .queues
        .iter()
        .zip(&load.rho_i)
        .map(|(q, r)| match q.discipline {
            Discipline::Gated => r * r * es / (1.0 - rho),
            _ => 0.0,
        })
        .sum();
    let rhs = rho * work2 / (2.0 * (1.0 - rho))
        + rho * es2 / (2.0 * es)
        + es / (2.0 * (1.0 - rho)) * (rho * rho - sum_sq)
        + left_behind;
    let residual = (lhs - rhs).abs();
    let residual_rel = if rhs != 0.0 { residual / rhs.abs() } else { residual };
    PclStatus::Checked { residual, residual_rel }
}

pub fn epoch_moments(model: &ValidatedModel) -> Result<MomentTable, ExactError> {
    Ok(Analysis::new(model)?.moments)
}

pub fn mean_waits(model: &ValidatedModel) -> Result<ExactReport, ExactError> {
    Ok(Analysis::new(model)?.report())
}

#[cfg(test)]
mod tests;
