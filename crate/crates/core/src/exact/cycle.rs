//! One server cycle as a sequence of branching-process operations.
//!
//! The embedded queue-length vector is tracked in "components": one per
//! queue, plus a second one for every globally gated queue, which splits
//! customers already behind the global gate (eligible) from later arrivals
//! (waiting). Over a cycle the vector evolves by
//!
//! * immigration: Poisson arrivals during a switch-over,
//! * branching: every customer in the served component is replaced by the
//!   arrivals during its service (gated) or its busy period (exhaustive),
//! * gating: waiting customers become eligible at the parent's visit.
//!
//! Each step is affine in the first moments and in the raw second moments,
//! so the stationary moments at a reference epoch solve linear systems, and
//! the joint PGF at an epoch is obtained by composing the laws of motion
//! backwards until the argument collapses onto the all-ones vector.

use num_complex::Complex64;

use crate::model::{Discipline, ValidatedModel};
use crate::randvar::RandVar;

use super::ExactError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Epoch {
    VisitBegin(usize),
    VisitEnd(usize),
}

#[derive(Debug, Clone)]
pub(crate) enum Duration {
    Service(usize),
    BusyPeriod(usize),
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Mark(Epoch),
    Gate,
    Serve {
        comp: usize,
        /// Arrival rate into each component during the replacement time.
        rates: Vec<f64>,
        duration: Duration,
    },
    Immigrate {
        rates: Vec<f64>,
        switchover: RandVar,
    },
}

/// First and raw second moments of the component vector.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub mean: Vec<f64>,
    /// Row-major `E[X_j X_k]`.
    pub second: Vec<f64>,
}

pub(crate) struct Cycle {
    pub dims: usize,
    pub queue_of: Vec<usize>,
    /// `(waiting, eligible)` component pairs of globally gated queues.
    pub gates: Vec<(usize, usize)>,
    pub ops: Vec<Op>,
    lambdas: Vec<f64>,
    services: Vec<RandVar>,
    /// Stationary mean vector just before each operation, once known.
    means: Option<Vec<Vec<f64>>>,
}

pub(crate) const PGF_TOL: f64 = 1e-15;
const PGF_FLOOR: f64 = 1e-10;
const PGF_MAX_CYCLES: usize = 1_000_000;
pub(crate) const BUSY_TOL: f64 = 1e-15;
const BUSY_MAX_ITER: usize = 1_000_000;

impl Cycle {
    pub fn build(model: &ValidatedModel) -> Cycle {
        let m = model.model();
        let n = m.n();
        let mut queue_of: Vec<usize> = (0..n).collect();
        let mut arrival_comp: Vec<usize> = (0..n).collect();
        let mut served_comp: Vec<usize> = (0..n).collect();
        let mut gates = Vec::new();
        let mut parent = None;
        for (i, q) in m.queues.iter().enumerate() {
            if let Discipline::GloballyGated { parent: p } = q.discipline {
                parent = Some(p);
                let waiting = queue_of.len();
                queue_of.push(i);
                arrival_comp[i] = waiting;
                served_comp[i] = i;
                gates.push((waiting, i));
            }
        }
        let dims = queue_of.len();
        let lambdas: Vec<f64> = m.queues.iter().map(|q| q.lambda).collect();
        let rates_excluding = |skip: Option<usize>| {
            let mut r = vec![0.0; dims];
            for (j, &l) in lambdas.iter().enumerate() {
                if Some(j) != skip {
                    r[arrival_comp[j]] += l;
                }
            }
            r
        };

        let mut ops = Vec::with_capacity(5 * n);
        for i in 0..n {
            ops.push(Op::Mark(Epoch::VisitBegin(i)));
            if parent == Some(i) {
                ops.push(Op::Gate);
            }
            let (rates, duration) = match m.queues[i].discipline {
                Discipline::Exhaustive => (rates_excluding(Some(i)), Duration::BusyPeriod(i)),
                _ => (rates_excluding(None), Duration::Service(i)),
            };
            ops.push(Op::Serve {
                comp: served_comp[i],
                rates,
                duration,
            });
            ops.push(Op::Mark(Epoch::VisitEnd(i)));
            ops.push(Op::Immigrate {
                rates: rates_excluding(None),
                switchover: m.switchover.leg(i, (i + 1) % n).clone(),
            });
        }
        Cycle {
            dims,
            queue_of,
            gates,
            ops,
            lambdas,
            services: m.queues.iter().map(|q| q.service.clone()).collect(),
            means: None,
        }
    }

    /// Records the stationary means at every position from the mean at the
    /// start of the cycle.
    pub fn attach_means(&mut self, start: &[f64]) {
        let mut mean = start.to_vec();
        let mut all = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            all.push(mean.clone());
            self.step_mean(op, &mut mean);
        }
        self.means = Some(all);
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    fn duration_moments(&self, d: &Duration) -> (f64, f64) {
        match *d {
            Duration::Service(i) => (self.services[i].mean(), self.services[i].moment2()),
            Duration::BusyPeriod(i) => {
                let b = &self.services[i];
                let rho = self.lambdas[i] * b.mean();
                (b.mean() / (1.0 - rho), b.moment2() / (1.0 - rho).powi(3))
            }
        }
    }

    /// Applies one operation to the first moments only.
    fn step_mean(&self, op: &Op, mean: &mut [f64]) {
        match op {
            Op::Mark(_) => {}
            Op::Gate => {
                for &(w, e) in &self.gates {
                    mean[e] += mean[w];
                    mean[w] = 0.0;
                }
            }
            Op::Serve { comp, rates, duration } => {
                let (er, _) = self.duration_moments(duration);
                let mc = mean[*comp];
                mean[*comp] = 0.0;
                for (m, r) in mean.iter_mut().zip(rates) {
                    *m += mc * r * er;
                }
            }
            Op::Immigrate { rates, switchover } => {
                let et = switchover.mean();
                for (m, r) in mean.iter_mut().zip(rates) {
                    *m += r * et;
                }
            }
        }
    }

    /// Applies one operation to `(mean, second)`; `mean` is the moment
    /// vector before the step.
    fn step_second(&self, op: &Op, mean: &[f64], second: &mut [f64]) {
        let d = self.dims;
        match op {
            Op::Mark(_) => {}
            Op::Gate => {
                for &(w, e) in &self.gates {
                    for j in 0..d {
                        second[e * d + j] += second[w * d + j];
                        second[w * d + j] = 0.0;
                    }
                    for j in 0..d {
                        second[j * d + e] += second[j * d + w];
                        second[j * d + w] = 0.0;
                    }
                }
            }
            Op::Serve { comp, rates, duration } => {
                let c = *comp;
                let (er, er2) = self.duration_moments(duration);
                let mc = mean[c];
                let fc = second[c * d + c] - mc;
                let mut col: Vec<f64> = (0..d).map(|j| second[j * d + c]).collect();
                col[c] = 0.0;
                for j in 0..d {
                    second[c * d + j] = 0.0;
                    second[j * d + c] = 0.0;
                }
                for j in 0..d {
                    let yj = rates[j] * er;
                    for k in 0..d {
                        let yk = rates[k] * er;
                        let mut g = rates[j] * rates[k] * er2;
                        if j == k {
                            g += rates[j] * er;
                        }
                        second[j * d + k] += col[j] * yk + yj * col[k] + mc * g + fc * yj * yk;
                    }
                }
            }
            Op::Immigrate { rates, switchover } => {
                let et = switchover.mean();
                let et2 = switchover.moment2();
                for j in 0..d {
                    for k in 0..d {
                        let mut v = mean[j] * rates[k] * et
                            + rates[j] * mean[k] * et
                            + rates[j] * rates[k] * et2;
                        if j == k {
                            v += rates[j] * et;
                        }
                        second[j * d + k] += v;
                    }
                }
            }
        }
    }

    pub fn cycle_mean(&self, start: &[f64]) -> Vec<f64> {
        let mut mean = start.to_vec();
        for op in &self.ops {
            self.step_mean(op, &mut mean);
        }
        mean
    }

    pub fn cycle_second(&self, start_mean: &[f64], start_second: &[f64]) -> Vec<f64> {
        let mut mean = start_mean.to_vec();
        let mut second = start_second.to_vec();
        for op in &self.ops {
            self.step_second(op, &mean, &mut second);
            self.step_mean(op, &mut mean);
        }
        second
    }

    /// Runs one cycle from stationary moments, returning the moments at
    /// every marked epoch in order.
    pub fn trace(&self, start: &Moments) -> Vec<(Epoch, Moments)> {
        let mut mean = start.mean.clone();
        let mut second = start.second.clone();
        let mut out = Vec::new();
        for op in &self.ops {
            if let Op::Mark(e) = op {
                out.push((
                    *e,
                    Moments {
                        mean: mean.clone(),
                        second: second.clone(),
                    },
                ));
            }
            self.step_second(op, &mean, &mut second);
            self.step_mean(op, &mut mean);
        }
        out
    }

    pub fn position(&self, epoch: Epoch) -> usize {
        self.ops
            .iter()
            .position(|op| matches!(op, Op::Mark(e) if *e == epoch))
            .expect("every queue has both epochs")
    }

    /// Joint PGF of the component vector just before operation `pos`.
    pub fn joint_pgf(&self, pos: usize, z: &[Complex64]) -> Result<Complex64, ExactError> {
        let one = Complex64::new(1.0, 0.0);
        let mut z = z.to_vec();
        let mut value = one;
        let len = self.ops.len();
        let mut idx = pos;
        let mut last_gap = f64::INFINITY;
        for step in 0..PGF_MAX_CYCLES * len {
            if step % len == 0 {
                let gap = z.iter().map(|zc| (one - zc).norm()).fold(0.0, f64::max);
                // Converged, or stalled at the rounding floor near the all-ones vector.
                if gap < PGF_TOL || (gap < PGF_FLOOR && gap >= last_gap) {
                    // First-order tail: E[prod z^X] ~ 1 - sum E[X] (1 - z).
                    if let Some(means) = &self.means {
                        let tail: Complex64 =
                            means[idx].iter().zip(&z).map(|(m, zc)| (one - zc) * *m).sum();
                        value *= one - tail;
                    }
                    return Ok(value);
                }
                last_gap = gap;
            }
            idx = if idx == 0 { len - 1 } else { idx - 1 };
            match &self.ops[idx] {
                Op::Mark(_) => {}
                Op::Gate => {
                    for &(w, e) in &self.gates {
                        z[w] = z[e];
                    }
                }
                Op::Serve { comp, rates, duration } => {
                    let s = arrival_argument(rates, &z);
                    z[*comp] = match *duration {
                        Duration::Service(i) => self.services[i].laplace(s),
                        Duration::BusyPeriod(i) => {
                            busy_period_laplace(&self.services[i], self.lambdas[i], s)?
                        }
                    };
                }
                Op::Immigrate { rates, switchover } => {
                    value *= switchover.laplace(arrival_argument(rates, &z));
                }
            }
        }
        Err(ExactError::NoConvergence {
            what: "joint generating function",
            iterations: PGF_MAX_CYCLES,
        })
    }

    /// PGF of the total number of queue `queue` customers before `pos`.
    pub fn marginal_pgf(&self, pos: usize, queue: usize, z: Complex64) -> Result<Complex64, ExactError> {
        let arg: Vec<Complex64> = self
            .queue_of
            .iter()
            .map(|&q| if q == queue { z } else { Complex64::new(1.0, 0.0) })
            .collect();
        self.joint_pgf(pos, &arg)
    }
}

fn arrival_argument(rates: &[f64], z: &[Complex64]) -> Complex64 {
    rates
        .iter()
        .zip(z)
        .filter(|(r, _)| **r != 0.0)
        .map(|(r, zc)| (Complex64::new(1.0, 0.0) - zc) * *r)
        .fold(Complex64::new(0.0, 0.0), |a, b| a + b)
}

/// Busy-period transform of an M/G/1 queue: the root in the unit disk of
/// `x = B(s + lambda (1 - x))`, by fixed-point iteration from 1.
pub(crate) fn busy_period_laplace(
    service: &RandVar,
    lambda: f64,
    s: Complex64,
) -> Result<Complex64, ExactError> {
    let one = Complex64::new(1.0, 0.0);
    if s == Complex64::new(0.0, 0.0) {
        return Ok(one);
    }
    let rho = lambda * service.mean();
    // |x_{n+1} - x*| <= rho/(1-rho) |x_{n+1} - x_n|
    let gain = if rho > 0.0 { rho / (1.0 - rho) } else { 0.0 };
    let mut x = one;
    let mut last_step = f64::INFINITY;
    let mut damped = false;
    for _ in 0..BUSY_MAX_ITER {
        let g = service.laplace(s + (one - x) * lambda);
        let next = if damped { (x + g) * 0.5 } else { g };
        let step = (next - x).norm();
        x = next;
        if step * gain.max(1.0) <= BUSY_TOL || step <= 4.0 * f64::EPSILON * x.norm() {
            return Ok(x);
        }
        if step > last_step && !damped {
            damped = true;
        }
        last_step = step;
    }
    Err(ExactError::NoConvergence {
        what: "busy-period fixed point",
        iterations: BUSY_MAX_ITER,
    })
}
