//! Perpetual-futures replay: margin, account, fills, strategies and the
//! bar loop.

pub mod account;
pub mod fill;
pub mod margin;
pub mod replay;
pub mod strategy;

pub use account::{CashLedger, LiquidationEvent, SimAccount, SimPosition, TradeResult};
pub use fill::{execute_fill, FillModel, FillOutcome, Order};
pub use margin::{maintenance_margin, MarginError, MarginTable, MarginTier};
pub use replay::{
    run_replay, ActionRecord, EquityPoint, LossProxy, ReplayError, ReplayParams, RunResult, SimConfig,
    StopEvent, TrustConfig,
};
pub use strategy::{on_bar, Route, StrategyConfig, StrategyKind, STRATEGY_SKILL_ID};
