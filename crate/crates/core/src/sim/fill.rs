//! Fills at bar close with adverse slippage and taker fees.
//!
//! Orders carry target semantics: an open (or modify) moves the position to
//! `sign * notional * equity * leverage` in quote terms, a close flattens it.

use serde::{Deserialize, Serialize};

use crate::contract::{ExecutionDecision, Intent, Side};
use crate::sim::account::{SimAccount, TradeResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FillModel {
    pub taker_fee_bps: f64,
    pub base_slippage_bps: f64,
    /// Extra bps per unit of traded notional over the bar's quote volume.
    pub impact_k_bps: f64,
    pub liquidation_penalty_bps: f64,
}

impl Default for FillModel {
    fn default() -> Self {
        FillModel {
            taker_fee_bps: 4.0,
            base_slippage_bps: 2.0,
            impact_k_bps: 10.0,
            liquidation_penalty_bps: 50.0,
        }
    }
}

impl FillModel {
    pub fn is_valid(&self) -> bool {
        [
            self.taker_fee_bps,
            self.base_slippage_bps,
            self.impact_k_bps,
            self.liquidation_penalty_bps,
        ]
        .iter()
        .all(|x| x.is_finite() && *x >= 0.0)
    }

    /// Slippage in bps for trading `notional` quote against `adv` quote volume.
    pub fn slippage_bps(&self, notional: f64, adv: f64) -> f64 {
        let part = if adv > 0.0 { notional.abs() / adv } else { 0.0 };
        self.base_slippage_bps + self.impact_k_bps * part
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FillOutcome {
    NoTrade,
    Filled(TradeResult),
    /// Model slippage above the order's cap.
    Cancelled { model_bps: f64, cap_bps: f64 },
    InsufficientMargin { required: f64, equity: f64 },
}

impl FillOutcome {
    pub fn trade(&self) -> Option<&TradeResult> {
        match self {
            FillOutcome::Filled(t) => Some(t),
            _ => None,
        }
    }
}

/// What the executor is asked to do, after the gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Order<'a> {
    pub symbol: &'a str,
    pub intent: Intent,
    pub side: Side,
    /// Fraction of equity.
    pub notional: f64,
    pub leverage: f64,
    pub slippage_cap_bps: f64,
    pub timestamp_ms: i64,
}

impl<'a> Order<'a> {
    pub fn from_decision(
        symbol: &'a str,
        intent: Intent,
        side: Side,
        d: &ExecutionDecision,
        timestamp_ms: i64,
    ) -> Self {
        Order {
            symbol,
            intent,
            side,
            notional: d.effective_notional,
            leverage: d.effective_leverage,
            slippage_cap_bps: d.effective_slippage_bps,
            timestamp_ms,
        }
    }
}

/// Fills one order at `close`. `adv` is the quote volume used for impact.
pub fn execute_fill(
    acct: &mut SimAccount,
    order: &Order,
    close: f64,
    adv: f64,
    model: &FillModel,
) -> FillOutcome {
    let q0 = acct.signed_qty(order.symbol);
    let target_quote = match order.intent {
        Intent::Open | Intent::Modify => {
            order.side.sign() * order.notional * acct.equity().max(0.0) * order.leverage
        }
        Intent::Close => 0.0,
        Intent::Cancel => return FillOutcome::NoTrade,
    };
    let dq_est = target_quote / close - q0;
    if dq_est == 0.0 || !dq_est.is_finite() {
        return FillOutcome::NoTrade;
    }
    let model_bps = model.slippage_bps(dq_est * close, adv);
    if model_bps > order.slippage_cap_bps {
        return FillOutcome::Cancelled {
            model_bps,
            cap_bps: order.slippage_cap_bps,
        };
    }
    let fill = close * (1.0 + dq_est.signum() * model_bps / 1e4);
    let dq = if order.intent == Intent::Close {
        -q0
    } else {
        target_quote / fill - q0
    };
    if dq == 0.0 {
        return FillOutcome::NoTrade;
    }

    let q1 = q0 + dq;
    if q1.abs() > q0.abs() && q1.signum() != 0.0 {
        let fee = dq.abs() * fill * model.taker_fee_bps / 1e4;
        let other: f64 = acct
            .positions
            .iter()
            .filter(|(s, _)| s.as_str() != order.symbol)
            .map(|(_, p)| p.notional() / p.leverage)
            .sum();
        let required = other + q1.abs() * fill / order.leverage.max(f64::MIN_POSITIVE);
        let equity = acct.equity() - fee;
        if required > equity * (1.0 + 1e-12) {
            return FillOutcome::InsufficientMargin { required, equity };
        }
    }
    let lev = if order.intent == Intent::Close {
        acct.positions.get(order.symbol).map_or(1.0, |p| p.leverage)
    } else {
        order.leverage
    };
    FillOutcome::Filled(acct.trade(order.symbol, dq, fill, lev, model.taker_fee_bps, order.timestamp_ms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn open(notional: f64, lev: f64, cap: f64) -> Order<'static> {
        Order {
            symbol: "BTCUSDT",
            intent: Intent::Open,
            side: Side::Long,
            notional,
            leverage: lev,
            slippage_cap_bps: cap,
            timestamp_ms: 0,
        }
    }

    fn flat_model(slip: f64) -> FillModel {
        FillModel {
            base_slippage_bps: slip,
            impact_k_bps: 0.0,
            ..FillModel::default()
        }
    }

    #[test]
    fn open_long_example() {
        let mut a = SimAccount::new(10_000.0);
        let out = execute_fill(&mut a, &open(0.2, 1.0, 30.0), 100.0, 1e9, &flat_model(10.0));
        let t = out.trade().unwrap();
        assert_relative_eq!(t.price, 100.10, max_relative = 1e-14);
        assert_relative_eq!(t.fee, 0.80, max_relative = 1e-12);
        assert_relative_eq!(a.wallet, 10_000.0 - 0.80, max_relative = 1e-15);
    }

    #[test]
    fn zero_notional_is_a_no_op() {
        let mut a = SimAccount::new(10_000.0);
        let before = a.clone();
        assert_eq!(
            execute_fill(&mut a, &open(0.0, 1.0, 30.0), 100.0, 1e9, &flat_model(10.0)),
            FillOutcome::NoTrade
        );
        assert_eq!(a, before);
    }

    #[test]
    fn slippage_above_cap_cancels() {
        let mut a = SimAccount::new(10_000.0);
        let out = execute_fill(&mut a, &open(0.2, 1.0, 30.0), 100.0, 1e9, &flat_model(50.0));
        assert!(matches!(out, FillOutcome::Cancelled { .. }));
        assert!(a.positions.is_empty());
    }

    #[test]
    fn impact_grows_with_size() {
        let m = FillModel::default();
        assert!(m.slippage_bps(1e6, 1e6) > m.slippage_bps(1e3, 1e6));
        assert_eq!(m.slippage_bps(5.0, 0.0), m.base_slippage_bps);
    }

    #[test]
    fn margin_is_checked_on_increase_only() {
        let mut a = SimAccount::new(1000.0);
        let o = Order {
            leverage: 0.5,
            ..open(1.0, 0.5, 100.0)
        };
        // 1.0 * 1000 * 0.5 = 500 notional at leverage 0.5 needs 1000 margin plus fees.
        assert!(matches!(
            execute_fill(&mut a, &o, 100.0, 1e9, &flat_model(0.0)),
            FillOutcome::InsufficientMargin { .. }
        ));
        execute_fill(&mut a, &open(0.5, 2.0, 100.0), 100.0, 1e9, &flat_model(0.0));
        let close = Order {
            intent: Intent::Close,
            ..open(0.0, 1.0, 100.0)
        };
        let out = execute_fill(&mut a, &close, 90.0, 1e9, &flat_model(0.0));
        assert!(out.trade().is_some());
        assert!(a.positions.is_empty());
    }

    #[test]
    fn flip_moves_to_opposite_target() {
        let mut a = SimAccount::new(10_000.0);
        execute_fill(&mut a, &open(0.2, 1.0, 30.0), 100.0, 1e9, &flat_model(0.0));
        let short = Order {
            side: Side::Short,
            ..open(0.2, 1.0, 30.0)
        };
        let t = *execute_fill(&mut a, &short, 100.0, 1e9, &flat_model(0.0)).trade().unwrap();
        assert_relative_eq!(t.qty_delta, -20.0 - 0.2 * (10_000.0 - 0.8) / 100.0, max_relative = 1e-12);
        assert_eq!(a.positions["BTCUSDT"].side, Side::Short);
    }
}
