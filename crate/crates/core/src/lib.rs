//! Survivability-aware execution: a policy gate between an agent and an
//! exchange executor, a perpetual-futures replay simulator to test it, and
//! the attack harness and statistics used to compare gate variants.

// `!(x > 0.0)` style checks are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod autoopt;
pub mod bar;
pub mod config;
pub mod contract;
pub mod data;
pub mod dg;
pub mod enforcement;
pub mod market_state;
pub mod metrics;
pub mod policy;
pub mod runner;
pub mod sim;
pub mod trader_state;

pub use attacks::{AttackConfig, AttackFamily};
pub use bar::ReplayBar;
pub use contract::{
    AccountState, ActionVector, AuditRecord, BudgetVector, Decision, ExecutionContext, ExecutionDecision,
    ExecutionRequest, MarketState, Regime, TrustState,
};
pub use dg::{ActionLabel, IntendedPolicySpec};
pub use enforcement::{Gate, GateConfig, Variant};
pub use metrics::MetricsReport;
pub use policy::Policy;
pub use sim::{run_replay, ReplayParams, RunResult};
