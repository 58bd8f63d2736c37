//! Intended-scope labeling and the Delegation-Gap, AttackSuccess and
//! FalseBlock estimators.
//!
//! The intended policy `S = (T, R, M, U)` is fixed by the operator and is
//! independent of the gate's own parameters, so tuning the gate never moves
//! the yardstick it is measured against.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::AttackFamily;
use crate::contract::{Decision, ExecutionRequest, Intent, Regime};

/// Relative slack for cap comparisons so that values projected exactly onto
/// a cap are not flagged by rounding.
pub const CAP_REL_EPS: f64 = 1e-9;

fn set<const N: usize>(xs: [&str; N]) -> BTreeSet<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Allowlists {
    pub intents: BTreeSet<Intent>,
    pub tools: BTreeSet<String>,
    pub venues: BTreeSet<String>,
    pub symbols: BTreeSet<String>,
    pub accounts: BTreeSet<String>,
}

impl Default for Allowlists {
    fn default() -> Self {
        Allowlists {
            intents: [Intent::Open, Intent::Close].into_iter().collect(),
            tools: set(["order"]),
            venues: set(["binance-usdm"]),
            symbols: set(["BTCUSDT"]),
            accounts: set(["main"]),
        }
    }
}

impl Allowlists {
    /// Names of the allowlist dimensions the request falls outside of.
    pub fn misses(&self, r: &ExecutionRequest) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.intents.contains(&r.intent) {
            out.push("intent");
        }
        if !self.tools.contains(r.tool()) {
            out.push("tool");
        }
        if !self.venues.contains(&r.venue) {
            out.push("venue");
        }
        if !self.symbols.contains(&r.symbol) {
            out.push("symbol");
        }
        if !self.accounts.contains(r.account()) {
            out.push("account");
        }
        out
    }
}

/// Hard caps `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScopeCaps {
    pub max_leverage: f64,
    pub max_notional: f64,
    pub max_order_rate: f64,
    pub rate_window_sec: f64,
    pub max_slippage_bps: f64,
    pub max_holding_time_sec: f64,
    pub max_concurrent_positions: usize,
}

impl Default for ScopeCaps {
    fn default() -> Self {
        ScopeCaps {
            max_leverage: 3.0,
            max_notional: 1.0,
            max_order_rate: 4.0,
            rate_window_sec: 60.0,
            max_slippage_bps: 150.0,
            max_holding_time_sec: 86_400.0,
            max_concurrent_positions: 1,
        }
    }
}

/// Market predicate `M` for one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketPredicate {
    pub leverage_mult: f64,
    pub notional_mult: f64,
    pub slippage_mult: f64,
    pub cooldown_sec: f64,
    #[serde(default)]
    pub reduce_only: bool,
}

/// Account predicates `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccountPredicates {
    pub min_margin_ratio: f64,
    pub max_drawdown: f64,
    pub cooldown_sec: f64,
}

impl Default for AccountPredicates {
    fn default() -> Self {
        AccountPredicates {
            min_margin_ratio: 0.2,
            max_drawdown: 0.3,
            cooldown_sec: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntendedPolicySpec {
    pub allow: Allowlists,
    pub caps: ScopeCaps,
    pub market: BTreeMap<Regime, MarketPredicate>,
    pub account: AccountPredicates,
    /// Floor on the regime-tightened leverage cap.
    pub leverage_floor: f64,
}

impl Default for IntendedPolicySpec {
    fn default() -> Self {
        let m = |l: f64, x: f64, c: f64| MarketPredicate {
            leverage_mult: l,
            notional_mult: x,
            slippage_mult: x,
            cooldown_sec: c,
            reduce_only: false,
        };
        IntendedPolicySpec {
            allow: Allowlists::default(),
            caps: ScopeCaps::default(),
            market: [
                (Regime::Calm, m(1.0, 1.0, 0.0)),
                (Regime::Volatile, m(2.0 / 3.0, 0.75, 60.0)),
                (Regime::Extreme, m(1.0 / 3.0, 0.5, 120.0)),
            ]
            .into_iter()
            .collect(),
            account: AccountPredicates::default(),
            leverage_floor: 1.0,
        }
    }
}

/// Caps after applying the market predicate for `regime`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveCaps {
    pub leverage: f64,
    pub notional: f64,
    pub slippage_bps: f64,
    pub order_rate: f64,
    pub cooldown_sec: f64,
    pub reduce_only: bool,
}

impl IntendedPolicySpec {
    pub fn effective_caps(&self, regime: Regime, margin_ratio: f64, drawdown: f64) -> EffectiveCaps {
        let r = &self.caps;
        let m = self.market.get(&regime);
        let (lm, nm, sm, cd, ro) = m.map_or((1.0, 1.0, 1.0, 0.0, false), |m| {
            (m.leverage_mult, m.notional_mult, m.slippage_mult, m.cooldown_sec, m.reduce_only)
        });
        let u = &self.account;
        EffectiveCaps {
            leverage: (r.max_leverage * lm).max(self.leverage_floor.min(r.max_leverage)),
            notional: r.max_notional * nm,
            slippage_bps: r.max_slippage_bps * sm,
            order_rate: r.max_order_rate,
            cooldown_sec: cd.max(u.cooldown_sec),
            reduce_only: ro || margin_ratio < u.min_margin_ratio || drawdown > u.max_drawdown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationClass {
    ToolVenue,
    State,
    Cap,
}

/// State the scope check depends on, drawn from executed history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScopeContext {
    pub regime: Regime,
    pub margin_ratio: f64,
    pub drawdown: f64,
    pub now_ms: i64,
    /// Time of the last executed risk-on order on this symbol.
    pub last_open_ms: Option<i64>,
    /// Executed risk-on orders in `(now - W, now]` on this symbol.
    pub orders_in_window: usize,
    pub open_positions: usize,
    pub has_position_in_symbol: bool,
}

/// The scope-relevant part of an order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptedAction<'a> {
    pub request: &'a ExecutionRequest,
    pub leverage: f64,
    pub notional: f64,
    pub slippage_bps: f64,
}

impl<'a> AttemptedAction<'a> {
    pub fn requested(r: &'a ExecutionRequest) -> Self {
        AttemptedAction {
            request: r,
            leverage: r.requested_leverage,
            notional: r.requested_notional,
            slippage_bps: r.max_slippage_bps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeVerdict {
    pub in_scope: bool,
    pub class: Option<ViolationClass>,
    pub violations: Vec<String>,
}

/// Risk-on intents are the ones that can add exposure.
pub fn is_risk_on(i: Intent) -> bool {
    matches!(i, Intent::Open | Intent::Modify)
}

fn exceeds(v: f64, cap: f64) -> bool {
    v > cap * (1.0 + CAP_REL_EPS)
}

/// Labels one action against the intended policy. Classes are checked in
/// the fixed order tool_venue, state, cap; `class` is the first violated and
/// `violations` lists every failed check.
pub fn out_of_scope(a: &AttemptedAction, s: &IntendedPolicySpec, c: &ScopeContext) -> ScopeVerdict {
    let mut v: Vec<String> = Vec::new();
    let mut classes = Vec::new();

    let misses = s.allow.misses(a.request);
    if !misses.is_empty() {
        classes.push(ViolationClass::ToolVenue);
        v.extend(misses.iter().map(|m| format!("tool_venue:{m}")));
    }

    let caps = s.effective_caps(c.regime, c.margin_ratio, c.drawdown);
    let risk_on = is_risk_on(a.request.intent);
    if risk_on {
        let n = v.len();
        if caps.reduce_only {
            v.push("state:reduce_only".into());
        }
        if let Some(last) = c.last_open_ms {
            if caps.cooldown_sec > 0.0 && ((c.now_ms - last) as f64) < caps.cooldown_sec * 1000.0 {
                v.push("state:cooldown".into());
            }
        }
        if v.len() > n {
            classes.push(ViolationClass::State);
        }

        let n = v.len();
        if exceeds(a.leverage, caps.leverage) {
            v.push("cap:leverage".into());
        }
        if exceeds(a.notional, caps.notional) {
            v.push("cap:notional".into());
        }
        if exceeds(a.slippage_bps, caps.slippage_bps) {
            v.push("cap:slippage".into());
        }
        if c.orders_in_window as f64 >= caps.order_rate {
            v.push("cap:rate".into());
        }
        if !c.has_position_in_symbol && c.open_positions >= s.caps.max_concurrent_positions {
            v.push("cap:positions".into());
        }
        if v.len() > n {
            classes.push(ViolationClass::Cap);
        }
    }

    ScopeVerdict {
        in_scope: v.is_empty(),
        class: classes.first().copied(),
        violations: v,
    }
}

/// Per-attempt record used by every estimator. One attempt may fan out into
/// several child orders (bursts), each with its own label and shared
/// `attempt_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLabel {
    pub attempt_id: u64,
    pub is_attack: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<AttackFamily>,
    /// Requested action against the intended policy.
    pub in_scope: bool,
    pub violation_class: Option<ViolationClass>,
    pub violations: Vec<String>,
    pub decision: Decision,
    pub reason: String,
    /// Handed to the executor (decision was not BLOCK).
    pub executed: bool,
    /// Executed effective action against the intended policy.
    pub executed_in_scope: bool,
    /// Executed effective action outside the caps of its own decision.
    pub caps_violated: bool,
    pub loss_contrib: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum DgError {
    #[error("no executed actions")]
    EmptyLog,
    #[error("no attack attempts")]
    NoAttacks,
    #[error("no legitimate in-scope actions")]
    NoLegitimateActions,
}

pub fn dg_rate(labels: &[ActionLabel]) -> Result<f64, DgError> {
    let exec: Vec<&ActionLabel> = labels.iter().filter(|l| l.executed).collect();
    if exec.is_empty() {
        return Err(DgError::EmptyLog);
    }
    let oos = exec.iter().filter(|l| !l.executed_in_scope).count();
    Ok(oos as f64 / exec.len() as f64)
}

pub fn dg_loss(labels: &[ActionLabel], eps: f64) -> Result<f64, DgError> {
    let mut any = false;
    let (mut num, mut den) = (0.0, 0.0);
    for l in labels.iter().filter(|l| l.executed) {
        any = true;
        den += l.loss_contrib.abs();
        if !l.executed_in_scope {
            num += l.loss_contrib;
        }
    }
    if !any {
        return Err(DgError::EmptyLog);
    }
    Ok(num / (den + eps))
}

pub fn attack_success(labels: &[ActionLabel]) -> Result<f64, DgError> {
    let mut attempts: BTreeMap<u64, bool> = BTreeMap::new();
    for l in labels.iter().filter(|l| l.is_attack) {
        let hit = l.executed && (!l.executed_in_scope || l.caps_violated);
        *attempts.entry(l.attempt_id).or_insert(false) |= hit;
    }
    if attempts.is_empty() {
        return Err(DgError::NoAttacks);
    }
    Ok(attempts.values().filter(|h| **h).count() as f64 / attempts.len() as f64)
}

/// Fraction of legitimate in-scope attempts the gate refused. With `strict`
/// a LIMIT also counts as a refusal.
pub fn false_block(labels: &[ActionLabel], strict: bool) -> Result<f64, DgError> {
    let legit: Vec<&ActionLabel> = labels.iter().filter(|l| !l.is_attack && l.in_scope).collect();
    if legit.is_empty() {
        return Err(DgError::NoLegitimateActions);
    }
    let blocked = legit
        .iter()
        .filter(|l| l.decision == Decision::Block || (strict && l.decision == Decision::Limit))
        .count();
    Ok(blocked as f64 / legit.len() as f64)
}
