use proptest::prelude::*;

use super::*;
use crate::model::{PollingModel, QueueSpec, SwitchoverMatrix};

fn exp(rate: f64) -> RandVar {
    RandVar::exponential(rate).unwrap()
}

fn det(v: f64) -> RandVar {
    RandVar::deterministic(v).unwrap()
}

fn cyclic(queues: Vec<QueueSpec>, ring: Vec<RandVar>) -> ValidatedModel {
    PollingModel {
        queues,
        switchover: SwitchoverMatrix::ring(ring),
        routing: Routing::Cyclic,
    }
    .validate()
    .unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn symmetric_two_exhaustive() -> ValidatedModel {
    cyclic(
        vec![
            QueueSpec::new(0.25, exp(1.0), Discipline::Exhaustive),
            QueueSpec::new(0.25, exp(1.0), Discipline::Exhaustive),
        ],
        vec![det(1.0), det(1.0)],
    )
}

/// Multiple-vacation M/G/1: E[W] = lambda E[B^2] / (2 (1 - rho)) + E[S^2] / (2 E[S]).
fn vacation_wait(lambda: f64, b: &RandVar, s: &RandVar) -> f64 {
    let rho = lambda * b.mean();
    lambda * b.moment2() / (2.0 * (1.0 - rho)) + s.moment2() / (2.0 * s.mean())
}

#[test]
fn basic_quantities_by_substitution() {
    let m = cyclic(
        vec![
            QueueSpec::new(0.2, exp(1.0), Discipline::Exhaustive),
            QueueSpec::new(0.3, exp(1.0), Discipline::Exhaustive),
        ],
        vec![det(0.5), det(0.5)],
    );
    let b = basic_quantities(&m).unwrap();
    assert!((b.mean_cycle - 2.0).abs() < 1e-15);
    assert!((b.mean_visit[0] - 0.4).abs() < 1e-15);
    assert!((b.mean_intervisit[0] - 1.6).abs() < 1e-15);
    for i in 0..2 {
        assert!((b.mean_visit[i] + b.mean_intervisit[i] - b.mean_cycle).abs() < 1e-15);
    }
}

#[test]
fn basic_quantities_without_load() {
    let m = cyclic(
        vec![QueueSpec::new(0.0, exp(1.0), Discipline::Gated)],
        vec![det(1.0)],
    );
    let b = basic_quantities(&m).unwrap();
    assert_eq!(b.mean_cycle, 1.0);
    assert_eq!(b.mean_visit[0], 0.0);
}

#[test]
fn preconditions() {
    let over = cyclic(
        vec![QueueSpec::new(1.2, exp(1.0), Discipline::Exhaustive)],
        vec![det(1.0)],
    );
    assert!(matches!(Analysis::new(&over), Err(ExactError::Unstable { .. })));

    let zero = cyclic(
        vec![QueueSpec::new(0.2, exp(1.0), Discipline::Exhaustive)],
        vec![det(0.0)],
    );
    assert_eq!(Analysis::new(&zero).err(), Some(ExactError::ZeroSwitchover));

    let k = cyclic(
        vec![
            QueueSpec::new(0.2, exp(1.0), Discipline::Exhaustive),
            QueueSpec::new(0.2, exp(1.0), Discipline::KLimited { k: 1 }),
        ],
        vec![det(1.0), det(1.0)],
    );
    assert!(matches!(
        Analysis::new(&k),
        Err(ExactError::UnsupportedDiscipline { queue: 1, .. })
    ));
}

#[test]
fn busy_period_transform() {
    let b = exp(1.0);
    assert_eq!(busy_period_lst(&b, 0.5, 0.0).unwrap(), 1.0);
    // No offspring: the busy period is one service.
    for w in [0.1, 1.0, 3.0] {
        assert!((busy_period_lst(&b, 0.0, w).unwrap() - b.lst(w).unwrap()).abs() < 1e-15);
    }
    // M/M/1 closed form: pi(w) = (lambda + mu + w - sqrt((lambda + mu + w)^2 - 4 lambda mu)) / (2 lambda)
    let (l, mu) = (0.5, 1.0);
    for w in [0.01, 0.5, 2.0] {
        let t: f64 = l + mu + w;
        let exact = (t - (t * t - 4.0 * l * mu).sqrt()) / (2.0 * l);
        assert!((busy_period_lst(&b, l, w).unwrap() - exact).abs() < 1e-14);
    }
    assert!(busy_period_lst(&b, 0.5, -1.0).is_err());
    assert!(busy_period_lst(&b, 1.5, 1.0).is_err());
}

#[test]
fn busy_period_mean_by_finite_difference() {
    for (service, lambda) in [
        (exp(1.0), 0.5),
        (det(2.0), 0.3),
        (RandVar::erlang(3, 2.0).unwrap(), 0.6),
        (RandVar::hyperexponential(vec![0.2, 0.8], vec![0.5, 4.0]).unwrap(), 0.4),
    ] {
        let rho = lambda * service.mean();
        let h = 1e-6;
        let d = -(busy_period_lst(&service, lambda, h).unwrap() - 1.0) / h;
        let mean = service.mean() / (1.0 - rho);
        // forward difference: truncation about h E[Theta^2] / 2
        let second = service.moment2() / (1.0 - rho).powi(3);
        assert!((d - mean).abs() < h * second, "{service}: {d} vs {mean}");
        let h = 1e-6;
        // Richardson on forward differences: 2 D(h) - D(2h)
        let d1 = (1.0 - busy_period_lst(&service, lambda, h).unwrap()) / h;
        let d2 = (1.0 - busy_period_lst(&service, lambda, 2.0 * h).unwrap()) / (2.0 * h);
        assert!(rel(2.0 * d1 - d2, mean) < 1e-6, "{service}");
    }
}

#[test]
fn branching_pgf_values() {
    let m = cyclic(
        vec![
            QueueSpec::new(0.2, exp(1.0), Discipline::Gated),
            QueueSpec::new(0.3, exp(2.0), Discipline::Exhaustive),
        ],
        vec![det(0.5), det(0.5)],
    );
    let a = Analysis::new(&m).unwrap();
    assert_eq!(a.branching_pgf(0, &[1.0, 1.0]).unwrap(), 1.0);
    assert_eq!(a.branching_pgf(1, &[1.0, 1.0]).unwrap(), 1.0);
    // Gated: B(sum lambda_j (1 - z_j))
    let v = a.branching_pgf(0, &[0.3, 0.6]).unwrap();
    let expected = exp(1.0).lst(0.2 * 0.7 + 0.3 * 0.4).unwrap();
    assert!((v - expected).abs() < 1e-15);
    // Exhaustive does not depend on its own coordinate.
    for z in [0.0, 0.5, 1.0] {
        assert_eq!(a.branching_pgf(1, &[1.0, z]).unwrap(), 1.0);
    }
    assert!(a.branching_pgf(0, &[1.2, 1.0]).is_err());
}

#[test]
fn single_gated_branching_pgf() {
    let b = exp(1.0);
    let m = cyclic(vec![QueueSpec::new(0.5, b.clone(), Discipline::Gated)], vec![det(1.0)]);
    let a = Analysis::new(&m).unwrap();
    for z in [0.0, 0.3, 0.9] {
        let v = a.branching_pgf(0, &[z]).unwrap();
        assert!((v - b.lst(0.5 * (1.0 - z)).unwrap()).abs() < 1e-15);
    }
}

#[test]
fn gated_single_queue_moments() {
    let m = cyclic(vec![QueueSpec::new(0.5, exp(1.0), Discipline::Gated)], vec![det(1.0)]);
    let t = epoch_moments(&m).unwrap();
    // lambda * E[C] with E[C] = E[S] / (1 - rho) = 2
    assert!((t.visit_begin[0].m(0) - 1.0).abs() < 1e-12);
}

#[test]
fn epoch_moment_invariants() {
    let m = cyclic(
        vec![
            QueueSpec::new(0.1, exp(1.0), Discipline::Gated),
            QueueSpec::new(0.2, RandVar::erlang(2, 3.0).unwrap(), Discipline::Exhaustive),
            QueueSpec::new(0.15, det(1.5), Discipline::Gated),
        ],
        vec![det(0.3), exp(2.0), RandVar::uniform(0.1, 0.5).unwrap()],
    );
    let a = Analysis::new(&m).unwrap();
    let ec = a.basics().mean_cycle;
    let t = a.moments();
    for (i, q) in m.model().queues.iter().enumerate() {
        match q.discipline {
            Discipline::Gated => assert!(rel(t.visit_begin[i].m(i), q.lambda * ec) < 1e-12),
            Discipline::Exhaustive => {
                assert_eq!(t.visit_end[i].m(i), 0.0);
                assert_eq!(t.visit_end[i].q(i, i), 0.0);
            }
            _ => unreachable!(),
        }
        // arrivals during the intervisit period
        let diff = t.visit_begin[i].m(i) - t.visit_end[i].m(i);
        assert!(rel(diff, q.lambda * a.basics().mean_intervisit[i]) < 1e-12);
        for e in [&t.visit_begin[i], &t.visit_end[i]] {
            for j in 0..3 {
                assert!(e.m(j) >= 0.0);
                for k in 0..3 {
                    assert!(e.q(j, k) >= 0.0);
                    assert!((e.q(j, k) - e.q(k, j)).abs() <= 1e-12 * e.q(j, k).abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn symmetric_two_queue_exhaustive_waits() {
    let r = mean_waits(&symmetric_two_exhaustive()).unwrap();
    for w in &r.mean_wait {
        assert!(rel(w.unwrap(), 2.5) < 1e-10, "{w:?}");
    }
    assert!(r.pcl.passes().unwrap());
}

#[test]
fn single_exhaustive_queue_is_a_vacation_queue() {
    let m = cyclic(vec![QueueSpec::new(0.5, exp(1.0), Discipline::Exhaustive)], vec![det(1.0)]);
    let r = mean_waits(&m).unwrap();
    assert!(rel(r.mean_wait[0].unwrap(), 1.5) < 1e-12);
    assert!(rel(r.mean_wait[0].unwrap(), vacation_wait(0.5, &exp(1.0), &det(1.0))) < 1e-12);
}

#[test]
fn vacation_grid() {
    let services = [exp(1.0), det(1.0), RandVar::hyperexponential(vec![0.25, 0.75], vec![0.5, 1.5]).unwrap()];
    let switches = [det(1.0), exp(0.5), RandVar::uniform(0.5, 2.0).unwrap()];
    for b in &services {
        for s in &switches {
            for rho in [0.2, 0.5, 0.9] {
                let lambda = rho / b.mean();
                let m = cyclic(vec![QueueSpec::new(lambda, b.clone(), Discipline::Exhaustive)], vec![s.clone()]);
                let w = mean_waits(&m).unwrap().mean_wait[0].unwrap();
                assert!(rel(w, vacation_wait(lambda, b, s)) < 1e-10, "{b} {s} {rho}");
            }
        }
    }
}

/// Single gated queue: C' = S + (work of arrivals during C), so
/// E[C^2] (1 - rho^2) = E[C] lambda E[B^2] + 2 rho E[C] E[S] + E[S^2].
#[test]
fn single_gated_queue_closed_form() {
    let b = RandVar::erlang(2, 1.0).unwrap();
    let s = exp(1.0);
    let lambda = 0.3;
    let rho = lambda * b.mean();
    let ec = s.mean() / (1.0 - rho);
    let ec2 = (ec * lambda * b.moment2() + 2.0 * rho * ec * s.mean() + s.moment2()) / (1.0 - rho * rho);
    let expected = (1.0 + rho) * ec2 / (2.0 * ec);
    let m = cyclic(vec![QueueSpec::new(lambda, b, Discipline::Gated)], vec![s]);
    let r = mean_waits(&m).unwrap();
    assert!(rel(r.mean_wait[0].unwrap(), expected) < 1e-12);
    match r.cycle_second_moment[0] {
        Some(CycleSecondMoment::Beginnings(c2)) => assert!(rel(c2, ec2) < 1e-12),
        other => panic!("{other:?}"),
    }
}

#[test]
fn symmetric_gated_matches_conservation_under_symmetry() {
    // Under symmetry the conservation law has one unknown.
    let n = 3;
    let (lambda, b, s) = (0.2, exp(1.0), det(0.5));
    let m = cyclic(
        (0..n).map(|_| QueueSpec::new(lambda, b.clone(), Discipline::Gated)).collect(),
        vec![s.clone(); n],
    );
    let rho_i = lambda * b.mean();
    let rho = n as f64 * rho_i;
    let es = n as f64 * s.mean();
    let es2 = es * es;
    let rhs = rho * (n as f64 * lambda * b.moment2()) / (2.0 * (1.0 - rho))
        + rho * es2 / (2.0 * es)
        + es / (2.0 * (1.0 - rho)) * (rho * rho - n as f64 * rho_i * rho_i)
        + n as f64 * rho_i * rho_i * es / (1.0 - rho);
    let w = rhs / rho;
    let r = mean_waits(&m).unwrap();
    for wi in &r.mean_wait {
        assert!(rel(wi.unwrap(), w) < 1e-10);
    }
}

/// Closed-form mean waits for an all-globally-gated cyclic system, with
/// queues renumbered to start at the parent.
fn globally_gated_closed_form(m: &ValidatedModel, parent: usize) -> Vec<f64> {
    let model = m.model();
    let n = model.n();
    let (es, es2) = model.total_switchover_moments().unwrap();
    let rho = m.load().rho;
    let ec = es / (1.0 - rho);
    let work2: f64 = model.queues.iter().map(|q| q.lambda * q.service.moment2()).sum();
    let ec2 = (ec * work2 + 2.0 * rho * ec * es + es2) / (1.0 - rho * rho);
    let mut w = vec![0.0; n];
    let mut prefix_s = 0.0;
    let mut prefix_rho = 0.0;
    for step in 0..n {
        let i = (parent + step) % n;
        let rho_i = m.load().rho_i[i];
        w[i] = prefix_s + (1.0 + 2.0 * prefix_rho + rho_i) * ec2 / (2.0 * ec);
        prefix_s += model.switchover.leg(i, (i + 1) % n).mean();
        prefix_rho += rho_i;
    }
    w
}

#[test]
fn globally_gated_matches_closed_form() {
    for parent in 0..3 {
        let m = cyclic(
            vec![
                QueueSpec::new(0.1, exp(1.0), Discipline::GloballyGated { parent }),
                QueueSpec::new(0.25, det(1.0), Discipline::GloballyGated { parent }),
                QueueSpec::new(0.05, RandVar::erlang(3, 1.0).unwrap(), Discipline::GloballyGated { parent }),
            ],
            vec![det(0.5), exp(1.0), RandVar::uniform(0.2, 0.4).unwrap()],
        );
        let r = mean_waits(&m).unwrap();
        let expected = globally_gated_closed_form(&m, parent);
        for i in 0..3 {
            assert!(rel(r.mean_wait[i].unwrap(), expected[i]) < 1e-10, "parent {parent} queue {i}");
        }
        // parent-cycle moment: closed form and moment-table route agree
        let a = Analysis::new(&m).unwrap();
        let q = &m.model().queues[1];
        let from_table = a.moments().visit_begin[parent].q(1, 1) / (q.lambda * q.lambda);
        match r.cycle_second_moment[0] {
            Some(CycleSecondMoment::Parent(c2)) => assert!(rel(c2, from_table) < 1e-10),
            other => panic!("{other:?}"),
        }
        assert!(matches!(r.pcl, PclStatus::NotApplicable { .. }));
    }
}

#[test]
fn first_queue_globally_gated_has_no_switchover_prefix() {
    let m = cyclic(
        (0..2).map(|_| QueueSpec::new(0.2, exp(1.0), Discipline::GloballyGated { parent: 0 })).collect(),
        vec![det(1.0), det(1.0)],
    );
    let r = mean_waits(&m).unwrap();
    let ec = r.basics.mean_cycle;
    let Some(CycleSecondMoment::Parent(c2)) = r.cycle_second_moment[0] else { panic!() };
    assert!(rel(r.mean_wait[0].unwrap(), (1.0 + 0.2) * c2 / (2.0 * ec)) < 1e-10);
}

#[test]
fn gated_two_route_consistency() {
    let m = cyclic(
        vec![
            QueueSpec::new(0.15, exp(1.0), Discipline::Gated),
            QueueSpec::new(0.2, det(1.2), Discipline::Exhaustive),
            QueueSpec::new(0.1, RandVar::erlang(2, 2.0).unwrap(), Discipline::Gated),
        ],
        vec![det(0.5), exp(3.0), det(0.2)],
    );
    let r = mean_waits(&m).unwrap();
    for i in [0, 2] {
        let Some(CycleSecondMoment::Beginnings(c2)) = r.cycle_second_moment[i] else { panic!() };
        let via_cycle = (1.0 + r.rho_i[i]) * c2 / (2.0 * r.basics.mean_cycle);
        assert!(rel(r.mean_wait[i].unwrap(), via_cycle) < 1e-8);
    }
}

#[test]
fn little_law_in_report() {
    let r = mean_waits(&symmetric_two_exhaustive()).unwrap();
    for i in 0..2 {
        let l = 0.25 * (r.mean_wait[i].unwrap() + 1.0);
        assert!(rel(r.mean_queue[i], l) < 1e-12);
    }
}

#[test]
fn exhaustive_completion_cycle_inverts_mean_wait() {
    let r = mean_waits(&symmetric_two_exhaustive()).unwrap();
    let Some(CycleSecondMoment::Completions(c2)) = r.cycle_second_moment[0] else { panic!() };
    let w = (1.0 - 0.25) * c2 / (2.0 * r.basics.mean_cycle);
    assert!(rel(w, 2.5) < 1e-12);
}

#[test]
fn zero_rate_queue_has_no_wait() {
    let m = cyclic(
        vec![
            QueueSpec::new(0.0, exp(1.0), Discipline::Gated),
            QueueSpec::new(0.4, exp(1.0), Discipline::Exhaustive),
        ],
        vec![det(1.0), det(1.0)],
    );
    let a = Analysis::new(&m).unwrap();
    let r = a.report();
    assert_eq!(r.mean_wait[0], None);
    assert_eq!(r.mean_queue[0], 0.0);
    assert!(r.pcl.passes().unwrap());
    assert_eq!(a.waiting_lst(0, 0.1), Err(ExactError::NoArrivals { queue: 0 }));
}

#[test]
fn marginal_pgf_normalization_and_derivative() {
    let m = cyclic(vec![QueueSpec::new(0.5, exp(1.0), Discipline::Exhaustive)], vec![det(1.0)]);
    let a = Analysis::new(&m).unwrap();
    assert_eq!(a.marginal_ql_pgf(0, 1.0).unwrap(), 1.0);
    // E[L] = lambda E[W] + rho with the vacation-queue wait
    let el = 0.5 * 1.5 + 0.5;
    let h = 1e-4;
    let d1 = (1.0 - a.marginal_ql_pgf(0, 1.0 - h).unwrap()) / h;
    let d2 = (1.0 - a.marginal_ql_pgf(0, 1.0 - 2.0 * h).unwrap()) / (2.0 * h);
    assert!(rel(2.0 * d1 - d2, el) < 1e-6, "{}", 2.0 * d1 - d2);
    assert!(a.marginal_ql_pgf(0, 1.5).is_err());
    assert!(a.marginal_ql_pgf(0, -0.1).is_err());
}

#[test]
fn marginal_pgf_matches_mean_for_mixed_system() {
    let m = cyclic(
        vec![
            QueueSpec::new(0.2, exp(1.0), Discipline::Gated),
            QueueSpec::new(0.3, det(1.0), Discipline::Exhaustive),
            QueueSpec::new(0.1, exp(2.0), Discipline::GloballyGated { parent: 0 }),
        ],
        vec![det(0.5), exp(2.0), det(0.3)],
    );
    let a = Analysis::new(&m).unwrap();
    let r = a.report();
    for i in 0..3 {
        // five-point backward stencil, O(h^4)
        let h = 1e-3;
        let f = |k: f64| a.marginal_ql_pgf(i, 1.0 - k * h).unwrap();
        let d = (25.0 - 48.0 * f(1.0) + 36.0 * f(2.0) - 16.0 * f(3.0) + 3.0 * f(4.0)) / (12.0 * h);
        assert!(rel(d, r.mean_queue[i]) < 1e-6, "queue {i}: {d} vs {}", r.mean_queue[i]);
    }
}

#[test]
fn waiting_lst_derivative_matches_mean_wait() {
    let m = cyclic(
        vec![
            QueueSpec::new(0.3, exp(1.0), Discipline::Gated),
            QueueSpec::new(0.2, RandVar::erlang(2, 2.0).unwrap(), Discipline::Exhaustive),
        ],
        vec![det(1.0), exp(1.0)],
    );
    let a = Analysis::new(&m).unwrap();
    let r = a.report();
    for i in 0..2 {
        assert_eq!(a.waiting_lst(i, 0.0).unwrap(), 1.0);
        let h = 1e-4;
        let d1 = (1.0 - a.waiting_lst(i, h).unwrap()) / h;
        let d2 = (1.0 - a.waiting_lst(i, 2.0 * h).unwrap()) / (2.0 * h);
        assert!(rel(2.0 * d1 - d2, r.mean_wait[i].unwrap()) < 1e-6, "queue {i}");
    }
    assert!(matches!(a.waiting_lst(0, 0.5), Err(ExactError::Domain(_))));
}

#[test]
fn waiting_lst_rejects_lcfs() {
    let m = cyclic(
        vec![QueueSpec::new(0.3, exp(1.0), Discipline::Gated).with_order(Order::Lcfs)],
        vec![det(1.0)],
    );
    let a = Analysis::new(&m).unwrap();
    assert_eq!(a.waiting_lst(0, 0.1), Err(ExactError::LcfsOrder { queue: 0 }));
    // moments do not depend on the service order
    assert!(a.report().mean_wait[0].is_some());
}

#[test]
fn point_masses_agree_with_pgf() {
    let m = cyclic(
        vec![
            QueueSpec::new(0.2, exp(1.0), Discipline::Gated),
            QueueSpec::new(0.15, exp(1.0), Discipline::Exhaustive),
        ],
        vec![det(0.5), det(0.5)],
    );
    let a = Analysis::new(&m).unwrap();
    for i in 0..2 {
        let p = a.queue_length_masses(i, 20).unwrap();
        assert!((p[0] - a.marginal_ql_pgf(i, 0.0).unwrap()).abs() < 1e-12);
        let z: f64 = 0.4;
        let series: f64 = p.iter().enumerate().map(|(k, pk)| pk * z.powi(k as i32)).sum();
        assert!((series - a.marginal_ql_pgf(i, z).unwrap()).abs() < 1e-10);
        let mass: f64 = p.iter().sum();
        assert!(mass <= 1.0 + 1e-12 && mass > 0.999);
    }
    assert!(a.queue_length_masses(0, 21).is_err());
}

#[test]
fn epoch_pgf_endpoints() {
    let a = Analysis::new(&symmetric_two_exhaustive()).unwrap();
    // Nothing is left at an exhaustive visit completion.
    assert!((a.epoch_pgf(0, true, 0.0).unwrap() - 1.0).abs() < 1e-15);
    assert!((a.epoch_pgf(0, false, 1.0).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn mean_wait_monotone_in_own_rate() {
    let mut last = 0.0;
    for k in 1..=9 {
        let l1 = 0.05 * k as f64;
        let m = cyclic(
            vec![
                QueueSpec::new(l1, exp(1.0), Discipline::Gated),
                QueueSpec::new(0.3, exp(1.0), Discipline::Exhaustive),
            ],
            vec![det(1.0), det(1.0)],
        );
        let w = mean_waits(&m).unwrap().mean_wait[0].unwrap();
        assert!(w >= last);
        last = w;
    }
}

fn arb_service() -> impl Strategy<Value = RandVar> {
    prop_oneof![
        (0.2..3.0f64).prop_map(|m| RandVar::deterministic(m).unwrap()),
        (0.2..3.0f64).prop_map(|m| RandVar::exponential(1.0 / m).unwrap()),
        (1u32..5, 0.2..3.0f64).prop_map(|(k, m)| RandVar::erlang(k, k as f64 / m).unwrap()),
        (0.2..3.0f64, 1.5..6.0f64).prop_map(|(m, c)| RandVar::from_mean_scv(m, c).unwrap()),
        (0.0..1.0f64, 0.1..2.0f64).prop_map(|(a, d)| RandVar::uniform(a, a + d).unwrap()),
    ]
}

fn arb_model(global: bool) -> impl Strategy<Value = ValidatedModel> {
    (1usize..=8).prop_flat_map(move |n| {
        (
            prop::collection::vec((arb_service(), 0.01..1.0f64, 0u8..3), n),
            prop::collection::vec(arb_service(), n),
            0.05..0.95f64,
            0..n,
        )
            .prop_map(move |(qs, ring, rho, parent)| {
                let weight: f64 = qs.iter().map(|(_, w, _)| w).sum();
                let queues = qs
                    .into_iter()
                    .map(|(b, w, d)| {
                        let lambda = rho * w / weight / b.mean();
                        let disc = match d {
                            0 => Discipline::Exhaustive,
                            1 => Discipline::Gated,
                            _ if global => Discipline::GloballyGated { parent },
                            _ => Discipline::Gated,
                        };
                        QueueSpec::new(lambda, b, disc)
                    })
                    .collect();
                cyclic(queues, ring)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conservation_law_holds(m in arb_model(false)) {
        let r = mean_waits(&m).unwrap();
        match r.pcl {
            PclStatus::Checked { residual_rel, .. } => prop_assert!(residual_rel <= 1e-8, "{residual_rel}"),
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn cycle_identities(m in arb_model(true)) {
        let b = basic_quantities(&m).unwrap();
        let load = m.load();
        let ec = load.mean_switchover.unwrap() / (1.0 - load.rho);
        prop_assert!(rel(b.mean_cycle, ec) <= 1e-12);
        for i in 0..m.n() {
            prop_assert!(rel(b.mean_visit[i] + b.mean_intervisit[i], b.mean_cycle) <= 1e-12);
        }
    }

    #[test]
    fn pgf_values_in_unit_interval(m in arb_model(true), z in 0.0..1.0f64) {
        let a = Analysis::new(&m).unwrap();
        for i in 0..m.n() {
            let v = a.marginal_ql_pgf(i, z).unwrap();
            prop_assert!((-1e-9..=1.0 + 1e-9).contains(&v), "{v}");
            let zs = vec![z; m.n()];
            if matches!(m.queue(i).discipline, Discipline::Exhaustive | Discipline::Gated) {
                let h = a.branching_pgf(i, &zs).unwrap();
                prop_assert!((0.0..=1.0).contains(&h));
            }
        }
    }

    #[test]
    fn gated_routes_agree(m in arb_model(false)) {
        let r = mean_waits(&m).unwrap();
        for i in 0..m.n() {
            if let Some(CycleSecondMoment::Beginnings(c2)) = r.cycle_second_moment[i] {
                let via_cycle = (1.0 + r.rho_i[i]) * c2 / (2.0 * r.basics.mean_cycle);
                prop_assert!(rel(r.mean_wait[i].unwrap(), via_cycle) <= 1e-8);
            }
        }
    }
}
