//! Application adapters: stochastic economic lot scheduling under base-stock
//! control, and vehicle-actuated traffic signals.
//!
//! Both translate a domain description into a [`PollingModel`], run the
//! exact engine where it applies and the simulator otherwise (or as well),
//! and report in domain terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{Analysis, ExactError};
use crate::model::{Discipline, PollingModel, QueueSpec, Routing, SwitchoverMatrix, ValidatedModel, ValidationError};
use crate::randvar::RandVar;
use crate::sim::{self, Estimate, SimConfig, SimError, SimReport};

/// Levels for which exact point masses are computed.
pub const EXACT_MASS_LEVELS: usize = 20;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Invalid(String),
    #[error("production system is unstable: rho = {rho} >= 1")]
    Unstable { rho: f64 },
    #[error("invalid model: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Model(Vec<ValidationError>),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LotPolicy {
    Exhaustive,
    Gated,
    KLimited(u64),
}

impl LotPolicy {
    fn discipline(&self) -> Discipline {
        match self {
            LotPolicy::Exhaustive => Discipline::Exhaustive,
            LotPolicy::Gated => Discipline::Gated,
            LotPolicy::KLimited(k) => Discipline::KLimited { k: *k },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Product {
    pub demand: f64,
    pub production: RandVar,
    /// Setup incurred before each production run of this product.
    pub setup: RandVar,
    pub base_stock: u64,
    pub lot_policy: LotPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelspSpec {
    pub products: Vec<Product>,
    /// Production sequence as product indices; cyclic `0..N` when equal to
    /// the identity.
    pub sequence: Vec<usize>,
}

impl SelspSpec {
    pub fn new(products: Vec<Product>) -> Self {
        let sequence = (0..products.len()).collect();
        Self { products, sequence }
    }

    /// Demand as arrivals, production as service, setups as switch-overs.
    pub fn model(&self) -> Result<ValidatedModel, ScenarioError> {
        let n = self.products.len();
        if n == 0 {
            return Err(ScenarioError::Invalid("at least one product is required".into()));
        }
        if self.sequence.is_empty() || self.sequence.iter().any(|&p| p >= n) {
            return Err(ScenarioError::Invalid("production sequence refers to unknown products".into()));
        }
        for p in 0..n {
            if !self.sequence.contains(&p) {
                return Err(ScenarioError::Invalid(format!("product {} is missing from the sequence", p + 1)));
            }
        }
        let queues = self
            .products
            .iter()
            .map(|p| QueueSpec::new(p.demand, p.production.clone(), p.lot_policy.discipline()))
            .collect();
        let mut switchover = SwitchoverMatrix::empty(n);
        let len = self.sequence.len();
        for k in 0..len {
            let (from, to) = (self.sequence[k], self.sequence[(k + 1) % len]);
            switchover.set(from, to, self.products[to].setup.clone());
        }
        let identity = self.sequence.iter().copied().eq(0..n);
        let routing = if identity {
            Routing::Cyclic
        } else {
            Routing::Table(self.sequence.clone())
        };
        let model = PollingModel {
            queues,
            switchover,
            routing,
        }
        .validate()
        .map_err(ScenarioError::Model)?;
        if model.load().rho >= 1.0 {
            return Err(ScenarioError::Unstable { rho: model.load().rho });
        }
        Ok(model)
    }

    pub fn canonical(&self) -> String {
        let mut out = String::from("selsp\n");
        for p in &self.products {
            out.push_str(&format!(
                "product demand={:?} production={} setup={} base_stock={} lot={:?}\n",
                p.demand, p.production, p.setup, p.base_stock, p.lot_policy
            ));
        }
        out.push_str(&format!("sequence={:?}\n", self.sequence));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductReport {
    pub base_stock: u64,
    /// Exact `E[L_i]`, when the exact engine applies.
    pub exact_shortfall: Option<f64>,
    pub simulated_shortfall: Option<Estimate>,
    /// `b_i - E[L_i]`, with the exact mean when available.
    pub net_stock: f64,
    /// `P(L_i < b_i)` from the simulated histogram seen by arriving demands.
    pub fill_rate: Option<f64>,
    /// The same probability from exact point masses, for `b_i` up to
    /// [`EXACT_MASS_LEVELS`] + 1.
    pub exact_fill_rate: Option<f64>,
    pub histogram: Vec<u64>,
}

impl ProductReport {
    pub fn shortfall(&self) -> Option<f64> {
        self.exact_shortfall.or(self.simulated_shortfall.map(|e| e.mean))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelspReport {
    pub products: Vec<ProductReport>,
    pub rho: f64,
}

struct Shortfall {
    exact: Option<(Vec<f64>, Vec<Vec<f64>>)>,
    sim: SimReport,
}

fn shortfall(spec: &SelspSpec, cfg: &SimConfig) -> Result<(ValidatedModel, Shortfall), ScenarioError> {
    let model = spec.model()?;
    let exact = match Analysis::new(&model) {
        Ok(a) => {
            let report = a.report();
            let masses = (0..model.n())
                .map(|i| a.queue_length_masses(i, EXACT_MASS_LEVELS))
                .collect::<Result<Vec<_>, _>>()?;
            Some((report.mean_queue, masses))
        }
        Err(
            ExactError::UnsupportedDiscipline { .. }
            | ExactError::UnsupportedRouting(_)
            | ExactError::ZeroSwitchover,
        ) => None,
        Err(e) => return Err(e.into()),
    };
    let sim = sim::run(&model, cfg)?;
    Ok((model, Shortfall { exact, sim }))
}

fn product_report(s: &Shortfall, i: usize, b: u64) -> ProductReport {
    let q = &s.sim.queues[i];
    let exact_shortfall = s.exact.as_ref().map(|(m, _)| m[i]);
    let simulated_shortfall = q.mean_queue;
    let mean = exact_shortfall.or(simulated_shortfall.map(|e| e.mean)).unwrap_or(0.0);
    let level = usize::try_from(b).unwrap_or(usize::MAX);
    ProductReport {
        base_stock: b,
        exact_shortfall,
        simulated_shortfall,
        net_stock: b as f64 - mean,
        fill_rate: q.fraction_below(level),
        exact_fill_rate: s.exact.as_ref().and_then(|(_, masses)| {
            (level <= EXACT_MASS_LEVELS + 1).then(|| masses[i][..level].iter().sum::<f64>().min(1.0))
        }),
        histogram: q.histogram.clone(),
    }
}

/// Shortfall distribution per product, mapped through `N_i = b_i - L_i`.
pub fn selsp_evaluate(spec: &SelspSpec, cfg: &SimConfig) -> Result<SelspReport, ScenarioError> {
    let (model, s) = shortfall(spec, cfg)?;
    Ok(SelspReport {
        products: spec
            .products
            .iter()
            .enumerate()
            .map(|(i, p)| product_report(&s, i, p.base_stock))
            .collect(),
        rho: model.load().rho,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStock {
    pub base_stock: u64,
    pub fill_rate: f64,
    /// The histogram cap was reached before the target; `base_stock` is a
    /// lower bound.
    pub lower_bound: bool,
}

/// Smallest base stock per product whose fill rate reaches `target_fill`.
/// The shortfall does not depend on the base stocks, so one simulation
/// serves every candidate level.
pub fn selsp_basestock_search(
    spec: &SelspSpec,
    target_fill: f64,
    cfg: &SimConfig,
) -> Result<Vec<BaseStock>, ScenarioError> {
    if !(target_fill > 0.0 && target_fill < 1.0) {
        return Err(ScenarioError::Invalid(format!("target fill rate {target_fill} is not in (0, 1)")));
    }
    let (_, s) = shortfall(spec, cfg)?;
    Ok(s.sim
        .queues
        .iter()
        .map(|q| {
            let cap = q.histogram.len().saturating_sub(1);
            (0..=cap)
                .find_map(|b| {
                    let f = q.fraction_below(b)?;
                    (f >= target_fill).then_some(BaseStock {
                        base_stock: b as u64,
                        fill_rate: f,
                        lower_bound: false,
                    })
                })
                .unwrap_or(BaseStock {
                    base_stock: cap as u64 + 1,
                    fill_rate: q.fraction_below(cap).unwrap_or(0.0),
                    lower_bound: true,
                })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalControl {
    /// Vehicle-actuated: green until the queue clears.
    Exhaustive,
    /// At most this many vehicles per green.
    KLimited(u64),
    /// Maximum green time; a discharging vehicle always completes.
    TimeLimited(RandVar),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub rate: f64,
    /// Discharge time per vehicle.
    pub headway: RandVar,
    pub control: SignalControl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    pub flows: Vec<Flow>,
    /// Clearance after phase `i`, before phase `i + 1`.
    pub clearance: Vec<RandVar>,
}

impl TrafficSpec {
    pub fn model(&self) -> Result<ValidatedModel, ScenarioError> {
        let n = self.flows.len();
        if n == 0 {
            return Err(ScenarioError::Invalid("at least one flow is required".into()));
        }
        if self.clearance.len() != n {
            return Err(ScenarioError::Invalid(format!(
                "{} clearance times given for {n} flows",
                self.clearance.len()
            )));
        }
        if let Some(i) = self.clearance.iter().position(|c| c.mean() <= 0.0) {
            return Err(ScenarioError::Invalid(format!("clearance {} must have a positive mean", i + 1)));
        }
        let queues = self
            .flows
            .iter()
            .map(|f| {
                let d = match &f.control {
                    SignalControl::Exhaustive => Discipline::Exhaustive,
                    SignalControl::KLimited(k) => Discipline::KLimited { k: *k },
                    SignalControl::TimeLimited(limit) => Discipline::TimeLimited { limit: limit.clone() },
                };
                QueueSpec::new(f.rate, f.headway.clone(), d)
            })
            .collect();
        PollingModel {
            queues,
            switchover: SwitchoverMatrix::ring(self.clearance.clone()),
            routing: Routing::Cyclic,
        }
        .validate()
        .map_err(ScenarioError::Model)
    }

    pub fn canonical(&self) -> String {
        let mut out = String::from("traffic\n");
        for f in &self.flows {
            let control = match &f.control {
                SignalControl::Exhaustive => "exhaustive".to_string(),
                SignalControl::KLimited(k) => format!("k-limited({k})"),
                SignalControl::TimeLimited(l) => format!("time-limited({l})"),
            };
            out.push_str(&format!("flow rate={:?} headway={} control={control}\n", f.rate, f.headway));
        }
        for c in &self.clearance {
            out.push_str(&format!("clearance {c}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub exact_delay: Option<f64>,
    pub simulated_delay: Option<Estimate>,
    /// Mean queue left at the end of green.
    pub overflow: Option<f64>,
}

impl FlowReport {
    pub fn delay(&self) -> Option<f64> {
        self.exact_delay.or(self.simulated_delay.map(|e| e.mean))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub flows: Vec<FlowReport>,
    pub rho: f64,
    /// Whether the exact engine produced the delays.
    pub exact: bool,
}

/// Mean delay before discharge and mean overflow queue per flow. The exact
/// engine supplies delays when every flow is vehicle-actuated; the simulator
/// always runs.
pub fn traffic_evaluate(spec: &TrafficSpec, cfg: &SimConfig) -> Result<TrafficReport, ScenarioError> {
    let model = spec.model()?;
    let all_exhaustive = spec.flows.iter().all(|f| f.control == SignalControl::Exhaustive);
    let exact = if all_exhaustive {
        Some(Analysis::new(&model)?.report())
    } else {
        None
    };
    let sim = sim::run(&model, cfg)?;
    let flows = (0..model.n())
        .map(|i| FlowReport {
            exact_delay: exact.as_ref().and_then(|r| r.mean_wait[i]),
            simulated_delay: sim.queues[i].mean_wait,
            overflow: if all_exhaustive {
                Some(0.0)
            } else {
                sim.queues[i].mean_queue_at_visit_end
            },
        })
        .collect();
    Ok(TrafficReport {
        flows,
        rho: model.load().rho,
        exact: all_exhaustive,
    })
}
