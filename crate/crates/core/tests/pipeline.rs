use std::collections::HashSet;
use std::path::PathBuf;

use polling_core::exact::{self, Analysis};
use polling_core::sim::{self, Horizon, SimConfig};
use polling_core::{config, Stability};

fn configs() -> Vec<(String, String)> {
    let dir: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs"].iter().collect();
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn sample_configs_parse_with_distinct_fingerprints() {
    let all = configs();
    assert!(all.len() >= 8);
    let mut prints = HashSet::new();
    for (name, src) in &all {
        let c = config::parse(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(prints.insert(c.fingerprint()), "{name} repeats a fingerprint");
        if let Some(m) = &c.model {
            let v = m.clone().validate().unwrap_or_else(|e| panic!("{name}: {e:?}"));
            let expect_unstable = name.starts_with("unstable");
            assert_eq!(v.stability() == Stability::Unstable, expect_unstable, "{name}");
        }
    }
}

const MARKOV: &str = r#"
routing = "markovian"
markov = [[0.0, 0.7, 0.3], [0.5, 0.0, 0.5], [0.6, 0.4, 0.0]]

[[queues]]
lambda = 0.2
service = "exp(1.0)"
discipline = "gated"

[[queues]]
lambda = 0.15
service = "erlang(2,2.0)"

[[queues]]
lambda = 0.1
service = "det(1.5)"
discipline = "k-limited(3)"

[switchover]
matrix = [
  ["-", "exp(4.0)", "det(0.3)"],
  ["det(0.2)", "-", "uniform(0.1,0.5)"],
  ["exp(2.0)", "det(0.4)", "-"],
]
"#;

const TABLE: &str = r#"
routing = "table"
table = [1, 2, 1, 3]

[[queues]]
lambda = 0.3
service = "exp(1.0)"

[[queues]]
lambda = 0.1
service = "exp(1.0)"
discipline = "bernoulli(0.5)"

[[queues]]
lambda = 0.1
service = "exp(1.0)"
discipline = "time-limited(exp(0.5))"

[switchover]
matrix = [
  ["-", "det(0.5)", "det(0.5)"],
  ["det(0.5)", "-", "-"],
  ["det(0.5)", "-", "-"],
]
"#;

#[test]
fn non_cyclic_routings_conserve_work_and_obey_little() {
    for (k, src) in [MARKOV, TABLE].iter().enumerate() {
        let v = config::parse(src).unwrap().model.unwrap().validate().unwrap();
        assert_eq!(v.stability(), Stability::Unknown);
        assert!(matches!(Analysis::new(&v), Err(exact::ExactError::UnsupportedRouting(_))));
        let cfg = SimConfig::new(Horizon::Customers(150_000), 31 + k as u64).with_replications(4);
        let r = sim::run(&v, &cfg).unwrap();
        let rho = v.load().rho;
        let busy: Vec<f64> = r
            .runs
            .iter()
            .map(|run| run.busy_time / run.observed_time())
            .collect();
        let mean_busy = busy.iter().sum::<f64>() / busy.len() as f64;
        let sd = (busy.iter().map(|b| (b - mean_busy).powi(2)).sum::<f64>() / (busy.len() - 1) as f64).sqrt();
        let hw = polling_core::sim::stats::t_quantile(busy.len() - 1) * sd / (busy.len() as f64).sqrt();
        assert!((r.busy_fraction - rho).abs() <= 3.0 * hw.max(1e-3), "busy {} vs rho {rho}", r.busy_fraction);
        for (i, q) in r.queues.iter().enumerate() {
            let spec = v.queue(i);
            let w = q.mean_wait.unwrap();
            let l = q.mean_queue.unwrap();
            let little = spec.lambda * (w.mean + spec.service.mean());
            let tol = 3.0 * (l.half_width + spec.lambda * w.half_width);
            assert!((l.mean - little).abs() <= tol, "queue {i}: L {} vs lambda(W+B) {little}", l.mean);
        }
    }
}

#[test]
fn analysis_is_shareable_across_threads() {
    let src = std::fs::read_to_string(format!("{}/../../configs/mixed.toml", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let v = config::parse(&src).unwrap().model.unwrap().validate().unwrap();
    let a = Analysis::new(&v).unwrap();
    let serial: Vec<f64> = (0..8).map(|k| a.marginal_ql_pgf(k % 3, k as f64 / 8.0).unwrap()).collect();
    let parallel: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|k| {
                let a = &a;
                s.spawn(move || a.marginal_ql_pgf(k % 3, k as f64 / 8.0).unwrap())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
    assert_eq!(a.report(), exact::mean_waits(&v).unwrap());
}
