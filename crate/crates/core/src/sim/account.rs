//! Cross-margin perpetual account with a cash ledger.
//!
//! Every wallet change goes through one of four ledger lines (fees, funding,
//! realized PnL, liquidation charges), so the run-level identity
//! `wallet - initial = realized - fees - funding - liquidation_charges`
//! holds by construction up to float rounding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::contract::{self, AccountState, PositionSnapshot, Side};
use crate::sim::margin::{maintenance_margin, MarginError, MarginTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPosition {
    pub side: Side,
    /// Base units, always positive.
    pub qty: f64,
    pub entry_price: f64,
    pub leverage: f64,
    pub mark: f64,
    pub opened_ms: i64,
}

impl SimPosition {
    pub fn signed_qty(&self) -> f64 {
        self.side.sign() * self.qty
    }

    pub fn notional(&self) -> f64 {
        self.qty * self.mark
    }

    pub fn unrealized(&self) -> f64 {
        (self.mark - self.entry_price) * self.signed_qty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CashLedger {
    pub fees: f64,
    /// Net funding paid (negative when received).
    pub funding: f64,
    pub realized_pnl: f64,
    /// Liquidation penalties net of any shortfall absorbed at bankruptcy.
    pub liquidation_charges: f64,
}

impl CashLedger {
    pub fn net(&self) -> f64 {
        self.realized_pnl - self.fees - self.funding - self.liquidation_charges
    }
}

/// Result of applying one trade to the book.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeResult {
    pub qty_delta: f64,
    pub price: f64,
    pub fee: f64,
    pub realized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidationEvent {
    pub timestamp_ms: i64,
    pub symbol: String,
    pub margin_balance: f64,
    pub maintenance_margin: f64,
    pub penalty: f64,
    pub shortfall_covered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAccount {
    pub initial_wallet: f64,
    pub wallet: f64,
    pub positions: BTreeMap<String, SimPosition>,
    pub ledger: CashLedger,
    pub liquidations: u32,
    pub peak_equity: f64,
}

impl SimAccount {
    pub fn new(wallet: f64) -> Self {
        SimAccount {
            initial_wallet: wallet,
            wallet,
            positions: BTreeMap::new(),
            ledger: CashLedger::default(),
            liquidations: 0,
            peak_equity: wallet,
        }
    }

    pub fn unrealized(&self) -> f64 {
        self.positions.values().map(|p| p.unrealized()).sum()
    }

    pub fn equity(&self) -> f64 {
        self.wallet + self.unrealized()
    }

    pub fn gross_notional(&self) -> f64 {
        self.positions.values().map(|p| p.notional()).sum()
    }

    /// Initial margin in use: notional over leverage summed over positions.
    pub fn used_margin(&self) -> f64 {
        self.positions.values().map(|p| p.notional() / p.leverage).sum()
    }

    pub fn mark(&mut self, symbol: &str, price: f64) {
        if let Some(p) = self.positions.get_mut(symbol) {
            p.mark = price;
        }
    }

    pub fn update_peak(&mut self) {
        self.peak_equity = self.peak_equity.max(self.equity());
    }

    pub fn signed_qty(&self, symbol: &str) -> f64 {
        self.positions.get(symbol).map_or(0.0, |p| p.signed_qty())
    }

    fn credit_realized(&mut self, x: f64) {
        self.wallet += x;
        self.ledger.realized_pnl += x;
    }

    fn charge_fee(&mut self, x: f64) {
        self.wallet -= x;
        self.ledger.fees += x;
    }

    /// Trades `dq` signed base units at `price`, realizing PnL on any reduced
    /// part and charging `fee_bps` on the traded notional.
    pub fn trade(
        &mut self,
        symbol: &str,
        dq: f64,
        price: f64,
        leverage: f64,
        fee_bps: f64,
        now_ms: i64,
    ) -> TradeResult {
        let q0 = self.signed_qty(symbol);
        let q1 = q0 + dq;
        let mut realized = 0.0;
        if q0 != 0.0 && q0.signum() != dq.signum() {
            let closed = dq.abs().min(q0.abs());
            let entry = self.positions[symbol].entry_price;
            realized = (price - entry) * closed * q0.signum();
        }
        let fee = dq.abs() * price * fee_bps / 1e4;
        self.credit_realized(realized);
        self.charge_fee(fee);

        // Treat |q1| tiny relative to the trade as flat.
        if q1.abs() <= 1e-12 * dq.abs().max(q0.abs()) {
            self.positions.remove(symbol);
        } else {
            let side = if q1 > 0.0 { Side::Long } else { Side::Short };
            let entry = if q0 == 0.0 || q0.signum() != q1.signum() {
                price
            } else if q1.abs() > q0.abs() {
                let e0 = self.positions[symbol].entry_price;
                (e0 * q0.abs() + price * (q1.abs() - q0.abs())) / q1.abs()
            } else {
                self.positions[symbol].entry_price
            };
            let opened = match self.positions.get(symbol) {
                Some(p) if p.side == side => p.opened_ms,
                _ => now_ms,
            };
            self.positions.insert(
                symbol.to_string(),
                SimPosition {
                    side,
                    qty: q1.abs(),
                    entry_price: entry,
                    leverage,
                    mark: price,
                    opened_ms: opened,
                },
            );
        }
        TradeResult {
            qty_delta: dq,
            price,
            fee,
            realized,
        }
    }

    /// LONG pays positive funding, SHORT receives it. Returns the payment.
    pub fn apply_funding(&mut self, symbol: &str, rate: f64) -> f64 {
        let Some(p) = self.positions.get(symbol) else {
            return 0.0;
        };
        let pay = rate * p.notional() * p.side.sign();
        self.wallet -= pay;
        self.ledger.funding += pay;
        pay
    }

    pub fn maintenance_margin(&self, table: &MarginTable) -> Result<f64, MarginError> {
        self.positions
            .values()
            .map(|p| maintenance_margin(p.notional(), table))
            .sum()
    }

    /// Liquidates every position when margin balance is at or below
    /// maintenance margin. Positions close at their mark with a penalty of
    /// `penalty_bps` on notional; a negative wallet is reset to zero and the
    /// shortfall booked against the penalty line.
    pub fn check_liquidation(
        &mut self,
        table: &MarginTable,
        penalty_bps: f64,
        now_ms: i64,
    ) -> Result<Option<LiquidationEvent>, MarginError> {
        if self.positions.is_empty() {
            return Ok(None);
        }
        let mb = self.equity();
        let mm = self.maintenance_margin(table)?;
        if mb > mm {
            return Ok(None);
        }
        let symbols: Vec<String> = self.positions.keys().cloned().collect();
        let mut penalty = 0.0;
        for s in &symbols {
            let p = self.positions.remove(s).expect("present");
            self.credit_realized(p.unrealized());
            penalty += p.notional() * penalty_bps / 1e4;
        }
        let before = self.wallet;
        let after = (before - penalty).max(0.0);
        let charge = before - after;
        self.wallet = after;
        self.ledger.liquidation_charges += charge;
        self.liquidations += 1;
        Ok(Some(LiquidationEvent {
            timestamp_ms: now_ms,
            symbol: symbols.join(","),
            margin_balance: mb,
            maintenance_margin: mm,
            penalty,
            shortfall_covered: penalty - charge,
        }))
    }

    /// Contract view of the account for the gate.
    pub fn snapshot(&self, recent_order_times: Vec<i64>, recent_pnl: Vec<f64>, now_ms: i64) -> AccountState {
        let equity = self.equity();
        let peak = self.peak_equity.max(equity);
        let holding: Vec<f64> = self
            .positions
            .values()
            .map(|p| (now_ms - p.opened_ms) as f64 / 1000.0)
            .collect();
        AccountState {
            equity,
            peak_equity: peak,
            drawdown: contract::drawdown(equity, peak),
            margin_ratio: contract::margin_ratio(equity, self.gross_notional()),
            positions: self
                .positions
                .iter()
                .map(|(s, p)| PositionSnapshot {
                    symbol: s.clone(),
                    side: p.side,
                    notional: p.notional(),
                    entry_price: p.entry_price,
                    leverage: p.leverage,
                })
                .collect(),
            recent_order_times,
            recent_pnl,
            avg_holding_time_sec: if holding.is_empty() {
                0.0
            } else {
                holding.iter().sum::<f64>() / holding.len() as f64
            },
        }
    }
}
