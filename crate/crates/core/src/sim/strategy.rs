//! Deterministic baseline intent generators standing in for an agent.

use serde::{Deserialize, Serialize};

use crate::bar::ReplayBar;
use crate::contract::{ExecutionRequest, Intent, NotionalMode, OrderType, RequestMeta, Side};

pub const STRATEGY_SKILL_ID: &str = "core-strategy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Follows the sign of the lookback return, flipping when it changes.
    Momentum,
    /// Opens and closes on alternate bars; a load generator.
    Churn,
    /// Emits nothing, for attack-only runs.
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub lookback: usize,
    /// Minimum absolute lookback log return before acting.
    pub threshold: f64,
    pub leverage: f64,
    pub notional: f64,
    pub slippage_bps: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Momentum,
            lookback: 16,
            threshold: 0.002,
            leverage: 2.0,
            notional: 0.5,
            slippage_bps: 20.0,
        }
    }
}

/// Where the strategy sends its orders.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub symbol: String,
    pub venue: String,
}

fn request(cfg: &StrategyConfig, route: &Route, t: i64, intent: Intent, side: Side) -> ExecutionRequest {
    ExecutionRequest {
        symbol: route.symbol.clone(),
        venue: route.venue.clone(),
        timestamp_ms: t,
        intent,
        side,
        requested_notional: if intent == Intent::Close { 0.0 } else { cfg.notional },
        notional_mode: NotionalMode::Fraction,
        requested_leverage: cfg.leverage,
        order_type: OrderType::Market,
        max_slippage_bps: cfg.slippage_bps,
        strategy_id: format!("{:?}", cfg.kind).to_lowercase(),
        meta: RequestMeta {
            skill_id: Some(STRATEGY_SKILL_ID.into()),
            source: Some("strategy".into()),
            account: Some("main".into()),
            tool: Some("order".into()),
        },
    }
}

/// Orders for bar `i`, stamped at `t`. `held` is the current position side.
pub fn on_bar(
    cfg: &StrategyConfig,
    route: &Route,
    bars: &[ReplayBar],
    i: usize,
    t: i64,
    held: Option<Side>,
) -> Vec<ExecutionRequest> {
    match cfg.kind {
        StrategyKind::Momentum => {
            if cfg.lookback == 0 || i < cfg.lookback {
                return Vec::new();
            }
            let r = (bars[i].close / bars[i - cfg.lookback].close).ln();
            if r.abs() <= cfg.threshold {
                return Vec::new();
            }
            let want = if r > 0.0 { Side::Long } else { Side::Short };
            if held == Some(want) {
                Vec::new()
            } else {
                vec![request(cfg, route, t, Intent::Open, want)]
            }
        }
        StrategyKind::Churn => match held {
            None => vec![request(cfg, route, t, Intent::Open, Side::Long)],
            Some(s) => vec![request(cfg, route, t, Intent::Close, s)],
        },
        StrategyKind::Idle => Vec::new(),
    }
}
