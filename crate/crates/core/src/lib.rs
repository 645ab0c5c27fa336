//! Decentralized, price-based EV charging coordination under receding-horizon control.
//!
//! A coordinator broadcasts slot prices, each EV and the distribution operator
//! answer with their own optimal schedules, and prices move against the supply and
//! demand mismatch until the market clears. Only the first slot of each cleared
//! window is applied before the horizon shifts forward.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coordinator;
pub mod dso_agent;
pub mod error;
pub mod ev_agent;
pub mod model;
pub mod mpc;
pub mod oracle;
pub mod qp;
pub mod registry;
pub mod scenario;
pub mod trace;

pub use coordinator::{ConvergenceConfig, Coordinator, Negotiation, SlotMarket};
pub use error::{Error, Result};
pub use model::{DsoSpec, EvSession, PriceVector, StorageSpec, TimeGrid, Tolerances};
pub use mpc::{run, simulate_uncontrolled, Simulator};
pub use oracle::{solve_central, verify, OracleCap, VerifyReport};
pub use registry::StrategyRegistry;
pub use scenario::{parse_scenario, parse_scenario_with_overrides, Scenario};
pub use trace::{write_trace, SimulationTrace};
