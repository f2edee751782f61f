//! Benchmark fixtures.

use polling_core::{Discipline, PollingModel, QueueSpec, RandVar, Routing, SwitchoverMatrix, ValidatedModel};

/// `n` identical queues with exponential service of mean one, total load
/// `rho` and exponential switch-overs of mean `switch`.
pub fn symmetric(n: usize, rho: f64, switch: f64, discipline: Discipline) -> ValidatedModel {
    let lambda = rho / n as f64;
    let service = RandVar::exponential(1.0).expect("positive rate");
    let s = RandVar::exponential(1.0 / switch).expect("positive rate");
    PollingModel {
        queues: (0..n).map(|_| QueueSpec::new(lambda, service.clone(), discipline.clone())).collect(),
        switchover: SwitchoverMatrix::ring(vec![s; n]),
        routing: Routing::Cyclic,
    }
    .validate()
    .expect("fixture is valid")
}
