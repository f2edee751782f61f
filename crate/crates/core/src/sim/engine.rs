use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::model::{elevator_sequence, Discipline, Order, Routing, ValidatedModel};
use crate::randvar::RandVar;

use super::stats::{Slices, Tally};
use super::{Horizon, QueueRun, RunStats, SimConfig};

/// What the server does next while present at a queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Serve,
    Depart,
}

/// Progress of the current visit.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VisitState {
    /// Services completed during this visit.
    pub served: u64,
    /// Expiry of the time-limited timer, drawn at the visit beginning.
    pub timer_expiry: Option<f64>,
}

/// Serve-or-depart rule of each discipline. `eligible` counts the customers
/// that may be served now (those in front of the gate for gated types).
/// Bernoulli consumes one uniform only when it has a real choice to make.
pub fn discipline_step<R: Rng + ?Sized>(
    discipline: &Discipline,
    visit: &VisitState,
    eligible: usize,
    now: f64,
    rng: &mut R,
) -> Decision {
    if eligible == 0 {
        return Decision::Depart;
    }
    let serve = match discipline {
        Discipline::Exhaustive | Discipline::Gated | Discipline::GloballyGated { .. } => true,
        Discipline::KLimited { k } => visit.served < *k,
        Discipline::Bernoulli { p } => {
            visit.served == 0 || *p >= 1.0 || (*p > 0.0 && rng.gen::<f64>() < *p)
        }
        // expiry at the completion instant is processed after the completion
        Discipline::TimeLimited { .. } => {
            visit.served == 0 || visit.timer_expiry.is_none_or(|e| now <= e)
        }
    };
    if serve {
        Decision::Serve
    } else {
        Decision::Depart
    }
}

enum Route {
    Sequence(Vec<usize>),
    Markov(Vec<Vec<f64>>),
}

#[derive(Clone, Copy)]
enum Server {
    Serving { until: f64 },
    Switching { until: f64 },
    Idle,
}

struct Queue {
    lambda: f64,
    service: RandVar,
    discipline: Discipline,
    lcfs: bool,
    /// Arrival times of customers that may be served.
    eligible: VecDeque<f64>,
    /// Arrival times of customers behind the gate.
    behind: VecDeque<f64>,
    in_service: bool,
    next_arrival: f64,
    last_visit: Option<f64>,
    out: QueueOut,
}

struct QueueOut {
    arrivals: u64,
    served: u64,
    waits: Tally,
    wait_slices: Slices,
    area: f64,
    area_slices: Slices,
    cycles: Tally,
    cycle_slices: Slices,
    visit_end: Tally,
    histogram: Vec<u64>,
}

impl Queue {
    fn in_system(&self) -> usize {
        self.eligible.len() + self.behind.len() + usize::from(self.in_service)
    }

    fn open_gate(&mut self) {
        self.eligible.append(&mut self.behind);
    }
}

pub(crate) fn simulate(model: &ValidatedModel, cfg: &SimConfig, replication: usize) -> RunStats {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    for _ in 0..replication {
        rng.jump();
    }
    let m = model.model();
    let n = m.n();
    let route = match &m.routing {
        Routing::Cyclic => Route::Sequence((0..n).collect()),
        Routing::Table(seq) => Route::Sequence(seq.clone()),
        Routing::Elevator => Route::Sequence(elevator_sequence(n)),
        Routing::Markovian(p) => Route::Markov(p.clone()),
    };
    let elevator = matches!(m.routing, Routing::Elevator);
    let parent = m.queues.iter().find_map(|q| match q.discipline {
        Discipline::GloballyGated { parent } => Some(parent),
        _ => None,
    });
    let route_len = match &route {
        Route::Sequence(s) => s.len(),
        Route::Markov(_) => n,
    };
    let stall_limit = 2 * route_len.max(n) + 2;

    let mut queues: Vec<Queue> = m
        .queues
        .iter()
        .map(|q| Queue {
            lambda: q.lambda,
            service: q.service.clone(),
            discipline: q.discipline.clone(),
            lcfs: q.order == Order::Lcfs,
            eligible: VecDeque::new(),
            behind: VecDeque::new(),
            in_service: false,
            next_arrival: f64::INFINITY,
            last_visit: None,
            out: QueueOut {
                arrivals: 0,
                served: 0,
                waits: Tally::default(),
                wait_slices: Slices::new(1.0),
                area: 0.0,
                area_slices: Slices::new(1.0),
                cycles: Tally::default(),
                cycle_slices: Slices::new(1.0),
                visit_end: Tally::default(),
                histogram: vec![0; cfg.max_level + 1],
            },
        })
        .collect();
    for q in &mut queues {
        if q.lambda > 0.0 {
            q.next_arrival = exp_sample(&mut rng, q.lambda);
        }
    }

    let (end_time, target, warm_count) = match cfg.horizon {
        Horizon::Time(t) => (t, u64::MAX, 0),
        Horizon::Customers(c) => (f64::INFINITY, c, (cfg.warmup * c as f64).ceil() as u64),
    };
    let mut warm_from = match cfg.horizon {
        Horizon::Time(t) => cfg.warmup * t,
        Horizon::Customers(_) => {
            if warm_count == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
    };

    let mut t = 0.0;
    let mut pos = 0usize;
    let mut next_pos = 0usize;
    let mut server: Server;
    let mut visit: VisitState;
    let mut stall = 0usize;
    let mut departures = 0u64;
    let mut events = 0u64;
    let mut truncated = false;
    let (mut busy, mut switching, mut idle) = (0.0, 0.0, 0.0);

    let queue_at = |pos: usize| match &route {
        Route::Sequence(s) => s[pos],
        Route::Markov(_) => pos,
    };

    // Start of the visit at `pos`.
    macro_rules! begin_visit {
        () => {{
            let i = queue_at(pos);
            if t >= warm_from {
                if let Some(prev) = queues[i].last_visit {
                    if prev >= warm_from {
                        let c = t - prev;
                        queues[i].out.cycles.add(c);
                        queues[i].out.cycle_slices.add(c, 1.0);
                    }
                }
            }
            queues[i].last_visit = Some(t);
            if matches!(queues[i].discipline, Discipline::Gated) {
                queues[i].open_gate();
            }
            let global = if elevator {
                parent.is_some() && (pos == 0 || pos == n)
            } else {
                parent == Some(i)
            };
            if global {
                for q in queues.iter_mut() {
                    if matches!(q.discipline, Discipline::GloballyGated { .. }) {
                        q.open_gate();
                    }
                }
            }
            visit = VisitState {
                served: 0,
                timer_expiry: match &queues[i].discipline {
                    Discipline::TimeLimited { limit } => Some(t + limit.sample(&mut rng)),
                    _ => None,
                },
            };
        }};
    }

    // Serve or leave the queue at `pos`; sets `server`.
    macro_rules! proceed {
        () => {{
            let i = queue_at(pos);
            let q = &mut queues[i];
            match discipline_step(&q.discipline, &visit, q.eligible.len(), t, &mut rng) {
                Decision::Serve => {
                    let arrived = if q.lcfs { q.eligible.pop_back() } else { q.eligible.pop_front() }
                        .expect("eligible customer");
                    if t >= warm_from {
                        let w = t - arrived;
                        q.out.waits.add(w);
                        q.out.wait_slices.add(w, 1.0);
                    }
                    q.in_service = true;
                    stall = 0;
                    server = Server::Serving { until: t + q.service.sample(&mut rng) };
                }
                Decision::Depart => {
                    if t >= warm_from {
                        let l = q.in_system() as f64;
                        q.out.visit_end.add(l);
                    }
                    next_pos = match &route {
                        Route::Sequence(s) => (pos + 1) % s.len(),
                        Route::Markov(p) => markov_next(&p[i], &mut rng),
                    };
                    let s = m.switchover.leg(i, queue_at(next_pos)).sample(&mut rng);
                    let empty = queues.iter().all(|q| q.in_system() == 0);
                    if s == 0.0 && empty {
                        stall += 1;
                    } else {
                        stall = 0;
                    }
                    if stall > stall_limit {
                        pos = next_pos;
                        server = Server::Idle;
                    } else {
                        server = Server::Switching { until: t + s };
                    }
                }
            }
        }};
    }

    begin_visit!();
    proceed!();

    loop {
        if events >= cfg.max_events {
            truncated = true;
            break;
        }
        let (arrival_at, arriving) = queues
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |best, (i, q)| {
                if q.next_arrival < best.0 {
                    (q.next_arrival, i)
                } else {
                    best
                }
            });
        let server_at = match server {
            Server::Serving { until } | Server::Switching { until } => until,
            Server::Idle => f64::INFINITY,
        };
        let next = server_at.min(arrival_at);
        if next == f64::INFINITY {
            // nothing can ever happen again
            if end_time.is_finite() {
                advance(&mut queues, server, t, end_time, warm_from, &mut busy, &mut switching, &mut idle);
            } else {
                truncated = true;
            }
            break;
        }
        if next > end_time {
            advance(&mut queues, server, t, end_time, warm_from, &mut busy, &mut switching, &mut idle);
            break;
        }
        advance(&mut queues, server, t, next, warm_from, &mut busy, &mut switching, &mut idle);
        t = next;
        events += 1;

        if server_at <= arrival_at {
            match server {
                Server::Serving { .. } => {
                    let i = queue_at(pos);
                    queues[i].in_service = false;
                    visit.served += 1;
                    departures += 1;
                    if t >= warm_from {
                        queues[i].out.served += 1;
                    }
                    if departures == warm_count && warm_from == f64::INFINITY {
                        warm_from = t;
                    }
                    if departures >= target {
                        break;
                    }
                    proceed!();
                }
                Server::Switching { .. } => {
                    pos = next_pos;
                    begin_visit!();
                    proceed!();
                }
                Server::Idle => unreachable!("idle server has no event"),
            }
        } else {
            let q = &mut queues[arriving];
            if t >= warm_from {
                let level = q.in_system().min(cfg.max_level);
                q.out.histogram[level] += 1;
                q.out.arrivals += 1;
            }
            if q.discipline.is_gated_type() {
                q.behind.push_back(t);
            } else {
                q.eligible.push_back(t);
            }
            q.next_arrival = t + exp_sample(&mut rng, q.lambda);
            if matches!(server, Server::Idle) {
                stall = 0;
                begin_visit!();
                proceed!();
            }
        }
    }

    RunStats {
        seed: cfg.seed,
        replication,
        events,
        truncated,
        busy_time: busy,
        switch_time: switching,
        idle_time: idle,
        queues: queues
            .into_iter()
            .map(|q| QueueRun {
                arrivals: q.out.arrivals,
                served: q.out.served,
                waits: q.out.waits,
                wait_batches: q.out.wait_slices.batch_means(cfg.batches),
                area: q.out.area,
                area_batches: q.out.area_slices.batch_means(cfg.batches),
                cycles: q.out.cycles,
                cycle_batches: q.out.cycle_slices.batch_means(cfg.batches),
                visit_end: q.out.visit_end,
                histogram: q.out.histogram,
            })
            .collect(),
    }
}

/// Accumulates time-weighted statistics over `[from, to]`, counting only the
/// part after `warm_from`.
#[allow(clippy::too_many_arguments)]
fn advance(
    queues: &mut [Queue],
    server: Server,
    from: f64,
    to: f64,
    warm_from: f64,
    busy: &mut f64,
    switching: &mut f64,
    idle: &mut f64,
) {
    let start = from.max(warm_from);
    if to <= start {
        return;
    }
    let dt = to - start;
    match server {
        Server::Serving { .. } => *busy += dt,
        Server::Switching { .. } => *switching += dt,
        Server::Idle => *idle += dt,
    }
    for q in queues {
        let l = q.in_system() as f64;
        q.out.area += l * dt;
        q.out.area_slices.add(l, dt);
    }
}

fn exp_sample<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

fn markov_next<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}
