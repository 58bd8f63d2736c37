//! Execution contract: the request, context and decision types exchanged
//! between a strategy, the gate and the executor, plus the audit record
//! every decision emits.
//!
//! Notional is carried internally as a fraction of current equity. Requests
//! that arrive in absolute (quote-currency) mode are normalized by
//! [`validate_request`]; malformed requests are rejected, never clamped.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Version tag written into every audit record.
pub const AUDIT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Open,
    Close,
    Modify,
    Cancel,
}

impl Intent {
    pub fn as_str(&self) -> &'static str {
        match self {
            Intent::Open => "open",
            Intent::Close => "close",
            Intent::Modify => "modify",
            Intent::Cancel => "cancel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Long,
    Short,
}

impl Side {
    /// +1 for long, -1 for short.
    pub fn sign(&self) -> f64 {
        match self {
            Side::Long => 1.0,
            Side::Short => -1.0,
        }
    }

    pub fn opposite(&self) -> Side {
        match self {
            Side::Long => Side::Short,
            Side::Short => Side::Long,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderType {
    #[default]
    Market,
    Limit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NotionalMode {
    #[default]
    Fraction,
    Absolute,
}

/// Provenance tags attached by whatever produced the request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub account: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionRequest {
    pub symbol: String,
    pub venue: String,
    pub timestamp_ms: i64,
    pub intent: Intent,
    pub side: Side,
    #[serde(alias = "notional_fraction")]
    pub requested_notional: f64,
    #[serde(default)]
    pub notional_mode: NotionalMode,
    #[serde(alias = "leverage")]
    pub requested_leverage: f64,
    #[serde(default)]
    pub order_type: OrderType,
    #[serde(alias = "slippage_bps")]
    pub max_slippage_bps: f64,
    #[serde(default)]
    pub strategy_id: String,
    #[serde(default)]
    pub meta: RequestMeta,
}

impl ExecutionRequest {
    pub fn account(&self) -> &str {
        self.meta.account.as_deref().unwrap_or(DEFAULT_ACCOUNT)
    }

    pub fn tool(&self) -> &str {
        self.meta.tool.as_deref().unwrap_or(DEFAULT_TOOL)
    }

    pub fn action(&self) -> ActionVector {
        ActionVector {
            leverage: self.requested_leverage,
            notional: self.requested_notional,
            slippage_bps: self.max_slippage_bps,
        }
    }
}

pub const DEFAULT_ACCOUNT: &str = "main";
pub const DEFAULT_TOOL: &str = "order";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContractError {
    #[error("malformed request: {0}")]
    MalformedRequest(String),
}

/// A request whose invariants hold and whose notional is a fraction of equity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedRequest(ExecutionRequest);

impl ValidatedRequest {
    pub fn into_inner(self) -> ExecutionRequest {
        self.0
    }
}

impl std::ops::Deref for ValidatedRequest {
    type Target = ExecutionRequest;

    fn deref(&self) -> &ExecutionRequest {
        &self.0
    }
}

/// Parses a JSON request. Unknown enum values and unknown keys surface as
/// [`ContractError::MalformedRequest`].
pub fn parse_request(json: &str) -> Result<ExecutionRequest, ContractError> {
    serde_json::from_str(json).map_err(|e| ContractError::MalformedRequest(e.to_string()))
}

pub fn validate_request(
    r: &ExecutionRequest,
    equity: f64,
) -> Result<ValidatedRequest, ContractError> {
    let bad = |m: &str| Err(ContractError::MalformedRequest(m.to_string()));
    if !(r.requested_leverage.is_finite() && r.requested_leverage > 0.0) {
        return bad("requested_leverage must be > 0");
    }
    if !(r.requested_notional.is_finite() && r.requested_notional >= 0.0) {
        return bad("requested_notional must be >= 0");
    }
    if !(r.max_slippage_bps.is_finite() && r.max_slippage_bps >= 0.0) {
        return bad("max_slippage_bps must be >= 0");
    }
    if r.symbol.is_empty() || r.venue.is_empty() {
        return bad("symbol and venue are required");
    }
    let mut out = r.clone();
    if r.notional_mode == NotionalMode::Absolute {
        if !(equity.is_finite() && equity > 0.0) {
            return bad("absolute notional needs positive equity to normalize");
        }
        out.requested_notional = r.requested_notional / equity;
        out.notional_mode = NotionalMode::Fraction;
    }
    Ok(ValidatedRequest(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSnapshot {
    pub symbol: String,
    pub side: Side,
    /// Quote-currency notional at the current mark.
    pub notional: f64,
    pub entry_price: f64,
    pub leverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountState {
    pub equity: f64,
    pub peak_equity: f64,
    pub drawdown: f64,
    /// Equity over gross position notional, capped at [`MAX_MARGIN_RATIO`]
    /// (a flat account reports the cap). Low values mean thin margin.
    pub margin_ratio: f64,
    pub positions: Vec<PositionSnapshot>,
    pub recent_order_times: Vec<i64>,
    pub recent_pnl: Vec<f64>,
    pub avg_holding_time_sec: f64,
}

pub const MAX_MARGIN_RATIO: f64 = 100.0;

impl AccountState {
    /// Flat account with the given equity and running peak.
    pub fn new(equity: f64, peak_equity: f64) -> Self {
        let peak = peak_equity.max(equity);
        AccountState {
            equity,
            peak_equity: peak,
            drawdown: drawdown(equity, peak),
            margin_ratio: MAX_MARGIN_RATIO,
            positions: Vec::new(),
            recent_order_times: Vec::new(),
            recent_pnl: Vec::new(),
            avg_holding_time_sec: 0.0,
        }
    }

    pub fn position(&self, symbol: &str) -> Option<&PositionSnapshot> {
        self.positions.iter().find(|p| p.symbol == symbol)
    }

    pub fn gross_notional(&self) -> f64 {
        self.positions.iter().map(|p| p.notional.abs()).sum()
    }
}

/// `1 - equity / peak` for a positive peak, else 0.
pub fn drawdown(equity: f64, peak: f64) -> f64 {
    if peak > 0.0 {
        (1.0 - equity / peak).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Equity over gross notional, capped.
pub fn margin_ratio(equity: f64, gross_notional: f64) -> f64 {
    if gross_notional <= 0.0 {
        MAX_MARGIN_RATIO
    } else {
        (equity / gross_notional).clamp(0.0, MAX_MARGIN_RATIO)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Calm,
    Volatile,
    Extreme,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Calm => "calm",
            Regime::Volatile => "volatile",
            Regime::Extreme => "extreme",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        match s {
            "calm" => Some(Regime::Calm),
            "volatile" => Some(Regime::Volatile),
            "extreme" => Some(Regime::Extreme),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub sigma: f64,
    pub funding: f64,
    pub liquidity: f64,
    pub regime: Regime,
    pub close_price: f64,
    pub volume: f64,
    /// sigma over its rolling normalizer.
    #[serde(default)]
    pub vol_ratio: f64,
}

impl MarketState {
    pub fn calm(close_price: f64) -> Self {
        MarketState {
            sigma: 0.0,
            funding: 0.0,
            liquidity: 1.0,
            regime: Regime::Calm,
            close_price,
            volume: 0.0,
            vol_ratio: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub p_prov: f64,
    pub r_cap: f64,
    pub inj_alert: bool,
    /// Opaque narrative-proxy flag.
    #[serde(default)]
    pub narrative_flag: Option<bool>,
}

impl TrustState {
    pub fn trusted() -> Self {
        TrustState {
            p_prov: 1.0,
            r_cap: 0.0,
            inj_alert: false,
            narrative_flag: None,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.p_prov) && (0.0..=1.0).contains(&self.r_cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionContext {
    pub account: AccountState,
    pub market: MarketState,
    pub trust: TrustState,
    /// Calibrated risk-escalation score from the trader-state service.
    #[serde(default)]
    pub risk_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetVector {
    pub leverage_cap: f64,
    pub notional_cap: f64,
    pub order_rate_cap: f64,
    pub slippage_cap_bps: f64,
    pub max_holding_time_sec: f64,
    #[serde(default)]
    pub cooldown_sec: f64,
    #[serde(default = "one")]
    pub staging_slices: u32,
}

fn one() -> u32 {
    1
}

impl BudgetVector {
    pub fn is_valid(&self) -> bool {
        [
            self.leverage_cap,
            self.notional_cap,
            self.order_rate_cap,
            self.slippage_cap_bps,
            self.max_holding_time_sec,
            self.cooldown_sec,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
            && self.staging_slices >= 1
    }

    /// True when `a` lies in the box spanned by the caps.
    pub fn contains(&self, a: &ActionVector) -> bool {
        a.leverage <= self.leverage_cap
            && a.notional <= self.notional_cap
            && a.slippage_bps <= self.slippage_cap_bps
    }
}

/// The projected degrees of freedom of an order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionVector {
    pub leverage: f64,
    pub notional: f64,
    pub slippage_bps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Allow,
    Limit,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagedSlice {
    pub notional: f64,
    pub delay_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionDecision {
    pub decision: Decision,
    pub effective_leverage: f64,
    pub effective_notional: f64,
    pub effective_slippage_bps: f64,
    pub cooldown_sec: f64,
    pub staging_plan: Vec<StagedSlice>,
    pub reason: String,
    /// Sequence number of the audit record produced with this decision.
    pub audit_seq: u64,
}

impl ExecutionDecision {
    pub fn is_executable(&self) -> bool {
        self.decision != Decision::Block
    }

    pub fn effective_action(&self) -> Option<ActionVector> {
        self.is_executable().then_some(ActionVector {
            leverage: self.effective_leverage,
            notional: self.effective_notional,
            slippage_bps: self.effective_slippage_bps,
        })
    }
}

/// Evidence for a single gate decision. Field order is the serialization
/// order, so identical runs produce identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub version: u32,
    pub seq: u64,
    pub timestamp_ms: i64,
    pub gate: String,
    pub request: ExecutionRequest,
    pub context_hash: String,
    pub regime: Regime,
    pub risk_score: f64,
    pub trust: TrustState,
    pub matched_rule_id: Option<String>,
    pub budgets: Option<BudgetVector>,
    pub requested: ActionVector,
    pub effective: Option<ActionVector>,
    pub decision: Decision,
    pub reason: String,
    pub violations: Vec<String>,
    pub flags: Vec<String>,
    pub latency_ms: f64,
}

/// Append-only sequence of audit records.
#[derive(Debug, Default, Clone)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_seq(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn append(&mut self, record: AuditRecord) {
        debug_assert_eq!(record.seq, self.next_seq());
        self.records.push(record);
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<AuditRecord> {
        self.records
    }
}

/// SHA-256 over the canonical JSON form of the context.
pub fn snapshot_hash(c: &ExecutionContext) -> String {
    let bytes = serde_json::to_vec(c).expect("context serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Writes one JSON document per line.
pub fn write_jsonl<W: Write, T: Serialize>(
    mut w: W,
    items: impl IntoIterator<Item = T>,
) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn walkthrough_request_is_valid() {
        let v = validate_request(&walkthrough_request(), 10_000.0).unwrap();
        assert_eq!(v.requested_leverage, 5.0);
        assert_eq!(v.requested_notional, 0.5);
        assert_eq!(v.max_slippage_bps, 80.0);
    }

    #[test]
    fn zero_leverage_is_malformed() {
        let mut r = walkthrough_request();
        r.requested_leverage = 0.0;
        assert!(matches!(
            validate_request(&r, 1.0),
            Err(ContractError::MalformedRequest(_))
        ));
        r.requested_leverage = 1.0;
        r.max_slippage_bps = -1.0;
        assert!(validate_request(&r, 1.0).is_err());
    }

    #[test]
    fn absolute_notional_normalizes_to_fraction() {
        let mut r = walkthrough_request();
        r.notional_mode = NotionalMode::Absolute;
        r.requested_notional = 2000.0;
        let v = validate_request(&r, 10_000.0).unwrap();
        assert_eq!(v.requested_notional, 0.2);
        assert_eq!(v.notional_mode, NotionalMode::Fraction);
    }

    #[test]
    fn unknown_enum_value_is_malformed() {
        let json = r#"{"symbol":"BTCUSDT","venue":"v","timestamp_ms":1,"intent":"liquidate",
            "side":"LONG","requested_notional":0.1,"requested_leverage":1,"max_slippage_bps":1}"#;
        assert!(matches!(
            parse_request(json),
            Err(ContractError::MalformedRequest(_))
        ));
    }

    #[test]
    fn short_alias_keys_are_accepted() {
        let json = r#"{"symbol":"BTCUSDT","venue":"binance-usdm","timestamp_ms":0,"intent":"open",
            "side":"LONG","leverage":5.0,"notional_fraction":0.50,"slippage_bps":80}"#;
        let r = parse_request(json).unwrap();
        assert_eq!(r.action(), walkthrough_request().action());
    }

    #[test]
    fn snapshot_hash_is_stable_and_sensitive() {
        let c = context();
        assert_eq!(snapshot_hash(&c), snapshot_hash(&c.clone()));
        let mut d = c.clone();
        d.trust.p_prov = 0.99;
        assert_ne!(snapshot_hash(&c), snapshot_hash(&d));
    }

    #[test]
    fn snapshot_hash_golden() {
        let golden = include_str!("../tests/golden/context_hash.txt").trim();
        assert_eq!(snapshot_hash(&context()), golden);
    }

    #[test]
    fn drawdown_definition() {
        let a = AccountState::new(90.0, 100.0);
        assert!((a.drawdown - 0.10).abs() < 1e-15);
        assert_eq!(AccountState::new(120.0, 100.0).peak_equity, 120.0);
    }

    #[test]
    fn blocked_decision_has_no_effective_action() {
        let d = ExecutionDecision {
            decision: Decision::Block,
            effective_leverage: 0.0,
            effective_notional: 0.0,
            effective_slippage_bps: 0.0,
            cooldown_sec: 0.0,
            staging_plan: vec![],
            reason: "x".into(),
            audit_seq: 0,
        };
        assert!(d.effective_action().is_none());
    }

    fn arb_request() -> impl Strategy<Value = ExecutionRequest> {
        (
            "[A-Z]{3,8}",
            0i64..2_000_000_000_000,
            prop_oneof![
                Just(Intent::Open),
                Just(Intent::Close),
                Just(Intent::Modify),
                Just(Intent::Cancel)
            ],
            any::<bool>(),
            0.0f64..10.0,
            0.01f64..50.0,
            0.0f64..500.0,
            proptest::option::of("[a-z]{1,6}"),
        )
            .prop_map(|(sym, ts, intent, long, n, l, s, skill)| ExecutionRequest {
                symbol: sym,
                venue: "binance-usdm".into(),
                timestamp_ms: ts,
                intent,
                side: if long { Side::Long } else { Side::Short },
                requested_notional: n,
                notional_mode: NotionalMode::Fraction,
                requested_leverage: l,
                order_type: OrderType::Limit,
                max_slippage_bps: s,
                strategy_id: "s".into(),
                meta: RequestMeta {
                    skill_id: skill,
                    ..Default::default()
                },
            })
    }

    proptest! {
        #[test]
        fn request_round_trips(r in arb_request()) {
            let text = serde_json::to_string(&r).unwrap();
            let back: ExecutionRequest = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn context_round_trips(eq in 1.0f64..1e6, p in 0.0f64..1.0, r in 0.0f64..1.0, alert in any::<bool>()) {
            let mut c = context();
            c.account = AccountState::new(eq, eq * 1.5);
            c.trust = TrustState { p_prov: p, r_cap: r, inj_alert: alert, narrative_flag: Some(alert) };
            let text = serde_json::to_string(&c).unwrap();
            let back: ExecutionContext = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(snapshot_hash(&back), snapshot_hash(&c));
            prop_assert_eq!(back, c);
        }
    }
}
