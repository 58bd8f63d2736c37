//! Last-mile enforcement: projection onto the budget box, cooldown and rate
//! guards, staging, allowlists and the gate that chains them per variant.
//! Every call to [`Gate::decide`] appends exactly one audit record.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contract::{
    snapshot_hash, validate_request, ActionVector, AuditLog, AuditRecord, BudgetVector, Decision,
    ExecutionContext, ExecutionDecision, ExecutionRequest, StagedSlice, AUDIT_SCHEMA_VERSION,
};
use crate::dg::{out_of_scope, is_risk_on, Allowlists, AttemptedAction, IntendedPolicySpec, ScopeContext};
use crate::policy::{evaluate_rules, tighten_budgets, Policy, RuleInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "NoSAE")]
    NoSae,
    #[serde(rename = "StaticOMS")]
    StaticOms,
    Budget,
    #[serde(rename = "BudgetCooldown", alias = "Budget+Cooldown")]
    BudgetCooldown,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::NoSae,
        Variant::StaticOms,
        Variant::Budget,
        Variant::BudgetCooldown,
        Variant::Full,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::NoSae => "NoSAE",
            Variant::StaticOms => "StaticOMS",
            Variant::Budget => "Budget",
            Variant::BudgetCooldown => "BudgetCooldown",
            Variant::Full => "Full",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "nosae" => Some(Variant::NoSae),
            "staticoms" => Some(Variant::StaticOms),
            "budget" => Some(Variant::Budget),
            "budgetcooldown" | "budget+cooldown" => Some(Variant::BudgetCooldown),
            "full" => Some(Variant::Full),
            _ => None,
        }
    }

    fn regime_budgets(&self) -> bool {
        matches!(self, Variant::Budget | Variant::BudgetCooldown | Variant::Full)
    }

    fn temporal_guards(&self) -> bool {
        matches!(self, Variant::StaticOms | Variant::BudgetCooldown | Variant::Full)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

// ------------------------------------------------------------ projection

/// Exposure normalized by a reference budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureVector {
    pub leverage: f64,
    pub notional: f64,
    pub rate: f64,
    pub slippage: f64,
}

impl ExposureVector {
    pub fn new(a: &ActionVector, orders_in_window: usize, reference: &BudgetVector) -> Self {
        let div = |x: f64, c: f64| if c > 0.0 { x / c } else if x > 0.0 { f64::INFINITY } else { 0.0 };
        ExposureVector {
            leverage: div(a.leverage, reference.leverage_cap),
            notional: div(a.notional, reference.notional_cap),
            rate: div(orders_in_window as f64, reference.order_rate_cap),
            slippage: div(a.slippage_bps, reference.slippage_cap_bps),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.leverage.max(self.notional).max(self.rate).max(self.slippage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub action: ActionVector,
    pub distance: f64,
}

impl Projection {
    pub fn changed(&self) -> bool {
        self.distance > 0.0
    }
}

/// Weighted-l2 projection onto `[0, cap]` per component, which for a box is
/// the componentwise clamp whatever the (positive) weights.
pub fn project_action(a: &ActionVector, b: &BudgetVector, weights: &[f64; 3]) -> Projection {
    let p = ActionVector {
        leverage: a.leverage.clamp(0.0, b.leverage_cap),
        notional: a.notional.clamp(0.0, b.notional_cap),
        slippage_bps: a.slippage_bps.clamp(0.0, b.slippage_cap_bps),
    };
    let d2 = weights[0] * (a.leverage - p.leverage).powi(2)
        + weights[1] * (a.notional - p.notional).powi(2)
        + weights[2] * (a.slippage_bps - p.slippage_bps).powi(2);
    Projection {
        action: p,
        distance: d2.sqrt(),
    }
}

// --------------------------------------------------------------- guards

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guard {
    Pass,
    NoOp,
    /// `now` is earlier than a time already seen on this symbol.
    ClockRegression,
}

const MAX_TRACKED_ORDERS: usize = 4096;

#[derive(Debug, Clone, Default, PartialEq)]
struct SymbolClock {
    last_action_ms: Option<i64>,
    last_seen_ms: Option<i64>,
    orders: VecDeque<i64>,
}

/// Executed risk-on order times per symbol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemporalState {
    clocks: BTreeMap<String, SymbolClock>,
}

impl TemporalState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_action_ms(&self, symbol: &str) -> Option<i64> {
        self.clocks.get(symbol).and_then(|c| c.last_action_ms)
    }

    /// Executed orders in `(now - window, now]`.
    pub fn orders_in_window(&self, symbol: &str, now_ms: i64, window_ms: i64) -> usize {
        self.clocks.get(symbol).map_or(0, |c| {
            c.orders
                .iter()
                .filter(|&&t| t > now_ms - window_ms && t <= now_ms)
                .count()
        })
    }

    fn regressed(&self, symbol: &str, now_ms: i64) -> bool {
        self.clocks
            .get(symbol)
            .and_then(|c| c.last_seen_ms.max(c.last_action_ms))
            .is_some_and(|t| now_ms < t)
    }

    pub fn observe(&mut self, symbol: &str, now_ms: i64) {
        let c = self.clocks.entry(symbol.to_string()).or_default();
        c.last_seen_ms = Some(c.last_seen_ms.map_or(now_ms, |t| t.max(now_ms)));
    }

    pub fn record_execution(&mut self, symbol: &str, now_ms: i64) {
        let c = self.clocks.entry(symbol.to_string()).or_default();
        c.last_action_ms = Some(now_ms);
        c.orders.push_back(now_ms);
        if c.orders.len() > MAX_TRACKED_ORDERS {
            c.orders.pop_front();
        }
    }
}

/// NoOp iff `now - last < cooldown`; equality passes.
pub fn check_cooldown(ts: &TemporalState, symbol: &str, now_ms: i64, cooldown_sec: f64) -> Guard {
    if ts.regressed(symbol, now_ms) {
        return Guard::ClockRegression;
    }
    match ts.last_action_ms(symbol) {
        Some(last) if ((now_ms - last) as f64) < cooldown_sec * 1000.0 => Guard::NoOp,
        _ => Guard::Pass,
    }
}

/// NoOp iff the executed count in `(now - W, now]` is at least the cap.
pub fn check_rate_limit(
    ts: &TemporalState,
    symbol: &str,
    now_ms: i64,
    w_rate_ms: i64,
    rate_cap: f64,
) -> Guard {
    if ts.regressed(symbol, now_ms) {
        return Guard::ClockRegression;
    }
    if ts.orders_in_window(symbol, now_ms, w_rate_ms) as f64 >= rate_cap {
        Guard::NoOp
    } else {
        Guard::Pass
    }
}

/// Equal child slices; the last one absorbs rounding so the children sum to
/// the parent exactly under left-to-right addition.
pub fn stage_plan(notional: f64, slices: u32, spacing_sec: f64) -> Vec<StagedSlice> {
    let n = slices.max(1);
    let each = notional / n as f64;
    let mut out = Vec::with_capacity(n as usize);
    let mut acc = 0.0;
    for i in 0..n {
        let v = if i + 1 == n && acc + each != notional {
            notional - acc
        } else {
            each
        };
        acc += v;
        out.push(StagedSlice {
            notional: v,
            delay_sec: i as f64 * spacing_sec,
        });
    }
    out
}

/// BLOCK label when any allowlist dimension is missed.
pub fn enforce_allowlists(r: &ExecutionRequest, allow: &Allowlists) -> Result<(), String> {
    let misses = allow.misses(r);
    if misses.is_empty() {
        Ok(())
    } else {
        Err(format!("tool_venue:{}", misses.join(",")))
    }
}

// ------------------------------------------------------------------ gate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub w_rate_sec: f64,
    pub staging_spacing_sec: f64,
    pub projection_weights: [f64; 3],
    /// Record wall-clock decision latency. Off keeps audit logs
    /// byte-reproducible.
    pub record_latency: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            w_rate_sec: 60.0,
            staging_spacing_sec: 60.0,
            projection_weights: [1.0; 3],
            record_latency: false,
        }
    }
}

pub struct Gate {
    variant: Variant,
    policy: Policy,
    spec: IntendedPolicySpec,
    cfg: GateConfig,
    temporal: TemporalState,
    audit: AuditLog,
}

struct Draft {
    decision: Decision,
    effective: Option<ActionVector>,
    budgets: Option<BudgetVector>,
    staging: Vec<StagedSlice>,
    rule: Option<String>,
    reason: String,
    violations: Vec<String>,
    flags: Vec<String>,
}

impl Draft {
    fn block(reason: impl Into<String>, budgets: Option<BudgetVector>) -> Self {
        Draft {
            decision: Decision::Block,
            effective: None,
            budgets,
            staging: Vec::new(),
            rule: None,
            reason: reason.into(),
            violations: Vec::new(),
            flags: Vec::new(),
        }
    }
}

impl Gate {
    pub fn new(variant: Variant, policy: Policy, spec: IntendedPolicySpec, cfg: GateConfig) -> Self {
        Gate {
            variant,
            policy,
            spec,
            cfg,
            temporal: TemporalState::new(),
            audit: AuditLog::new(),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn into_audit(self) -> AuditLog {
        self.audit
    }

    pub fn temporal(&self) -> &TemporalState {
        &self.temporal
    }

    fn w_rate_ms(&self) -> i64 {
        (self.cfg.w_rate_sec * 1000.0) as i64
    }

    /// Gates one request. Executable decisions are recorded into the
    /// temporal state here, so guards see exactly what was released.
    pub fn decide(&mut self, req: &ExecutionRequest, ctx: &ExecutionContext) -> ExecutionDecision {
        let started = self.cfg.record_latency.then(Instant::now);
        let draft = self.pipeline(req, ctx);
        if draft.decision != Decision::Block && is_risk_on(req.intent) {
            self.temporal.record_execution(&req.symbol, req.timestamp_ms);
        }
        self.temporal.observe(&req.symbol, req.timestamp_ms);

        let eff = draft.effective.unwrap_or(ActionVector {
            leverage: 0.0,
            notional: 0.0,
            slippage_bps: 0.0,
        });
        let cooldown = draft.budgets.map_or(0.0, |b| b.cooldown_sec);
        let latency_ms = started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1000.0);
        let seq = self.audit.next_seq();
        self.audit.append(AuditRecord {
            version: AUDIT_SCHEMA_VERSION,
            seq,
            timestamp_ms: req.timestamp_ms,
            gate: self.variant.as_str().to_string(),
            request: req.clone(),
            context_hash: snapshot_hash(ctx),
            regime: ctx.market.regime,
            risk_score: ctx.risk_score,
            trust: ctx.trust,
            matched_rule_id: draft.rule.clone(),
            budgets: draft.budgets,
            requested: req.action(),
            effective: draft.effective,
            decision: draft.decision,
            reason: draft.reason.clone(),
            violations: draft.violations,
            flags: draft.flags,
            latency_ms,
        });
        ExecutionDecision {
            decision: draft.decision,
            effective_leverage: eff.leverage,
            effective_notional: eff.notional,
            effective_slippage_bps: eff.slippage_bps,
            cooldown_sec: cooldown,
            staging_plan: draft.staging,
            reason: draft.reason,
            audit_seq: seq,
        }
    }

    fn pipeline(&self, req: &ExecutionRequest, ctx: &ExecutionContext) -> Draft {
        let v = match validate_request(req, ctx.account.equity) {
            Ok(v) => v,
            Err(e) => return Draft::block(format!("malformed: {e}"), None),
        };
        let requested = v.action();
        if self.variant == Variant::NoSae {
            return Draft {
                decision: Decision::Allow,
                effective: Some(requested),
                budgets: None,
                staging: stage_plan(requested.notional, 1, 0.0),
                rule: None,
                reason: "pass-through".into(),
                violations: Vec::new(),
                flags: Vec::new(),
            };
        }

        if self.variant == Variant::Full {
            if let Err(label) = enforce_allowlists(&v, &self.spec.allow) {
                let mut d = Draft::block("tool/venue not allowlisted", None);
                d.violations.push(label);
                return d;
            }
        }

        let b0 = self.policy.defaults;
        let risk_on = is_risk_on(v.intent);
        let (mut budget, mut rule_decision, mut rule, mut reason) =
            (b0, Decision::Allow, None, None::<String>);
        if self.variant.regime_budgets() {
            let trust = (self.variant == Variant::Full).then_some(&ctx.trust);
            budget = tighten_budgets(&b0, &ctx.market, &ctx.account, trust, &self.policy.tightening());
        }
        if self.variant == Variant::Full {
            let out = evaluate_rules(
                &self.policy.rules,
                &RuleInput {
                    regime: ctx.market.regime,
                    p_t: ctx.risk_score,
                    trust: &ctx.trust,
                    account: &ctx.account,
                },
                &budget,
                self.policy.leverage_floor,
            );
            budget = out.budget;
            rule = out.rule_id;
            reason = out.reason;
            rule_decision = out.decision;
            // Reductions stay executable: a rule BLOCK downgrades to LIMIT
            // for intents that cannot add exposure.
            if rule_decision == Decision::Block {
                if risk_on || rule.is_none() {
                    let mut d = Draft::block(reason.unwrap_or_else(|| "policy".into()), Some(budget));
                    d.rule = rule;
                    return d;
                }
                rule_decision = Decision::Limit;
            }
        }

        let now = v.timestamp_ms;
        let sym = v.symbol.as_str();
        let mut flags = Vec::new();
        let guard_block = |g: Guard, what: &str, flags: &mut Vec<String>| -> Option<Draft> {
            match g {
                Guard::Pass => None,
                Guard::NoOp => Some(Draft::block(what.to_string(), Some(budget))),
                Guard::ClockRegression => {
                    flags.push("clock_regression".into());
                    let mut d = Draft::block(what.to_string(), Some(budget));
                    d.flags = flags.clone();
                    Some(d)
                }
            }
        };

        if self.variant == Variant::StaticOms {
            if risk_on && !budget.contains(&requested) {
                return Draft::block("static cap", Some(budget));
            }
            if risk_on {
                let g = check_rate_limit(&self.temporal, sym, now, self.w_rate_ms(), budget.order_rate_cap);
                if let Some(d) = guard_block(g, "rate", &mut flags) {
                    return d;
                }
            }
            return Draft {
                decision: Decision::Allow,
                effective: Some(requested),
                budgets: Some(budget),
                staging: stage_plan(requested.notional, 1, 0.0),
                rule: None,
                reason: "within static caps".into(),
                violations: Vec::new(),
                flags,
            };
        }

        let proj = project_action(&requested, &budget, &self.cfg.projection_weights);
        if self.variant.temporal_guards() && risk_on {
            let g = check_cooldown(&self.temporal, sym, now, budget.cooldown_sec);
            if let Some(d) = guard_block(g, "cooldown", &mut flags) {
                return d;
            }
            let g = check_rate_limit(&self.temporal, sym, now, self.w_rate_ms(), budget.order_rate_cap);
            if let Some(d) = guard_block(g, "rate", &mut flags) {
                return d;
            }
        }
        let staging = stage_plan(proj.action.notional, budget.staging_slices, self.cfg.staging_spacing_sec);

        if self.variant == Variant::Full {
            let sc = ScopeContext {
                regime: ctx.market.regime,
                margin_ratio: ctx.account.margin_ratio,
                drawdown: ctx.account.drawdown,
                now_ms: now,
                last_open_ms: self.temporal.last_action_ms(sym),
                orders_in_window: self.temporal.orders_in_window(
                    sym,
                    now,
                    (self.spec.caps.rate_window_sec * 1000.0) as i64,
                ),
                open_positions: ctx.account.positions.len(),
                has_position_in_symbol: ctx.account.position(sym).is_some(),
            };
            let a = AttemptedAction {
                request: &v,
                leverage: proj.action.leverage,
                notional: proj.action.notional,
                slippage_bps: proj.action.slippage_bps,
            };
            let verdict = out_of_scope(&a, &self.spec, &sc);
            if !verdict.in_scope {
                let mut d = Draft::block("scope", Some(budget));
                d.rule = rule;
                d.violations = verdict.violations;
                return d;
            }
        }

        let decision = if proj.changed() {
            rule_decision.max(Decision::Limit)
        } else {
            rule_decision
        };
        let reason = reason.unwrap_or_else(|| {
            if proj.changed() {
                "projected to budget".into()
            } else {
                "within budget".into()
            }
        });
        Draft {
            decision,
            effective: Some(proj.action),
            budgets: Some(budget),
            staging,
            rule,
            reason,
            violations: Vec::new(),
            flags,
        }
    }
}
