//! Exact analysis and discrete-event simulation of single-server polling
//! systems.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod exact;
pub mod model;
pub mod randvar;
pub mod scenarios;
pub mod sim;

pub use config::{Config, ConfigError};
pub use exact::{Analysis, ExactError, ExactReport, PclStatus};
pub use model::{
    Discipline, LoadProfile, Order, PollingModel, QueueSpec, Routing, Stability, SwitchoverMatrix,
    ValidatedModel, ValidationError,
};
pub use randvar::{RandVar, RandVarError};
pub use sim::{Estimate, Horizon, SimConfig, SimError, SimReport};
