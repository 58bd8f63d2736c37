//! Budget tightening and the first-match rule list.
//!
//! Budgets factor as `B_t = B0 * g(regime) * h(margin, drawdown) * q(trust)`
//! componentwise, with the leverage cap floored afterwards. Rules are an
//! ordered list; the first whose predicate holds decides.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::{AccountState, BudgetVector, Decision, MarketState, Regime, TrustState};

/// Per-component multipliers (or weights) over the five continuous caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Components {
    pub leverage: f64,
    pub notional: f64,
    pub order_rate: f64,
    pub slippage: f64,
    pub holding: f64,
}

impl Components {
    pub const fn splat(v: f64) -> Self {
        Components {
            leverage: v,
            notional: v,
            order_rate: v,
            slippage: v,
            holding: v,
        }
    }

    fn zip(self, o: Components, f: impl Fn(f64, f64) -> f64) -> Components {
        Components {
            leverage: f(self.leverage, o.leverage),
            notional: f(self.notional, o.notional),
            order_rate: f(self.order_rate, o.order_rate),
            slippage: f(self.slippage, o.slippage),
            holding: f(self.holding, o.holding),
        }
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Components {
        self.zip(self, |a, _| f(a))
    }

    fn values(&self) -> [f64; 5] {
        [
            self.leverage,
            self.notional,
            self.order_rate,
            self.slippage,
            self.holding,
        ]
    }
}

impl std::ops::Mul for Components {
    type Output = Components;

    fn mul(self, o: Components) -> Components {
        self.zip(o, |a, b| a * b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeFactors {
    pub multipliers: Components,
    pub cooldown_sec: f64,
    pub staging_slices: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GTable {
    pub calm: RegimeFactors,
    pub volatile: RegimeFactors,
    pub extreme: RegimeFactors,
}

impl GTable {
    pub fn get(&self, r: Regime) -> &RegimeFactors {
        match r {
            Regime::Calm => &self.calm,
            Regime::Volatile => &self.volatile,
            Regime::Extreme => &self.extreme,
        }
    }
}

impl Default for GTable {
    fn default() -> Self {
        GTable {
            calm: RegimeFactors {
                multipliers: Components::splat(1.0),
                cooldown_sec: 0.0,
                staging_slices: 1,
            },
            volatile: RegimeFactors {
                multipliers: Components {
                    leverage: 2.0 / 3.0,
                    ..Components::splat(0.75)
                },
                cooldown_sec: 60.0,
                staging_slices: 4,
            },
            extreme: RegimeFactors {
                multipliers: Components {
                    leverage: 1.0 / 3.0,
                    ..Components::splat(0.5)
                },
                cooldown_sec: 120.0,
                staging_slices: 5,
            },
        }
    }
}

/// Account tightening: 1 inside the safe region, falling linearly to
/// `h_min` as margin ratio approaches `margin_min` or drawdown approaches
/// `dd_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HParams {
    pub margin_safe: f64,
    pub margin_min: f64,
    pub dd_safe: f64,
    pub dd_max: f64,
    pub h_min: f64,
}

impl Default for HParams {
    fn default() -> Self {
        HParams {
            margin_safe: 0.5,
            margin_min: 0.2,
            dd_safe: 0.10,
            dd_max: 0.30,
            h_min: 0.25,
        }
    }
}

/// Trust tightening. Provenance enters each component with its own weight,
/// capability risk and injection alerts enter uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QParams {
    pub prov_pivot: f64,
    pub q_min: f64,
    pub cap_risk_slope: f64,
    pub injection_multiplier: f64,
    pub provenance_weight: Components,
}

impl Default for QParams {
    fn default() -> Self {
        QParams {
            prov_pivot: 0.5,
            q_min: 0.25,
            cap_risk_slope: 0.5,
            injection_multiplier: 0.5,
            provenance_weight: Components {
                leverage: 0.0,
                ..Components::splat(0.5)
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub tau_limit: f64,
    pub tau_block: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_limit: 0.50,
            tau_block: 0.70,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TighteningConfig {
    pub g_table: GTable,
    pub h_params: HParams,
    pub q_params: QParams,
    pub leverage_floor: f64,
}

impl Default for TighteningConfig {
    fn default() -> Self {
        TighteningConfig {
            g_table: GTable::default(),
            h_params: HParams::default(),
            q_params: QParams::default(),
            leverage_floor: 1.0,
        }
    }
}

pub fn default_budget() -> BudgetVector {
    BudgetVector {
        leverage_cap: 3.0,
        notional_cap: 1.0,
        order_rate_cap: 4.0,
        slippage_cap_bps: 150.0,
        max_holding_time_sec: 86_400.0,
        cooldown_sec: 0.0,
        staging_slices: 1,
    }
}

fn ramp(x: f64, safe: f64, worst: f64, h_min: f64) -> f64 {
    // Linear from 1 at `safe` to h_min at `worst`; direction follows the
    // sign of (worst - safe).
    if safe == worst {
        return if x == safe { 1.0 } else { h_min };
    }
    let t = ((x - safe) / (worst - safe)).clamp(0.0, 1.0);
    1.0 - t * (1.0 - h_min)
}

pub fn account_factor(account: &AccountState, p: &HParams) -> f64 {
    let hm = ramp(account.margin_ratio, p.margin_safe, p.margin_min, p.h_min);
    let hd = ramp(account.drawdown, p.dd_safe, p.dd_max, p.h_min);
    (hm * hd).max(p.h_min)
}

pub fn trust_factor(z: &TrustState, p: &QParams) -> Components {
    let prov = (z.p_prov / p.prov_pivot).clamp(p.q_min, 1.0);
    let cap = 1.0 - p.cap_risk_slope * z.r_cap.clamp(0.0, 1.0);
    let inj = if z.inj_alert {
        p.injection_multiplier
    } else {
        1.0
    };
    p.provenance_weight
        .map(|w| (1.0 - w * (1.0 - prov)) * cap * inj)
}

fn scale_budget(b0: &BudgetVector, f: Components) -> BudgetVector {
    BudgetVector {
        leverage_cap: b0.leverage_cap * f.leverage,
        notional_cap: b0.notional_cap * f.notional,
        order_rate_cap: b0.order_rate_cap * f.order_rate,
        slippage_cap_bps: b0.slippage_cap_bps * f.slippage,
        max_holding_time_sec: b0.max_holding_time_sec * f.holding,
        ..*b0
    }
}

/// Full factorized tightening. `trust = None` skips q (variants without
/// trust conditioning).
pub fn tighten_budgets(
    b0: &BudgetVector,
    market: &MarketState,
    account: &AccountState,
    trust: Option<&TrustState>,
    cfg: &TighteningConfig,
) -> BudgetVector {
    let g = cfg.g_table.get(market.regime);
    let h = Components::splat(account_factor(account, &cfg.h_params));
    let q = trust.map_or(Components::splat(1.0), |z| {
        trust_factor(z, &cfg.q_params)
    });
    let mut b = scale_budget(b0, g.multipliers * h * q);
    b.leverage_cap = b.leverage_cap.max(cfg.leverage_floor);
    b.cooldown_sec = b0.cooldown_sec.max(g.cooldown_sec);
    b.staging_slices = b0.staging_slices.max(g.staging_slices);
    b
}

// ---------------------------------------------------------------- rules

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Regime,
    PT,
    PProv,
    RCap,
    InjAlert,
    NarrativeFlag,
    Drawdown,
    MarginRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Num(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cmp {
    pub field: Field,
    pub op: Op,
    pub value: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InSet {
    pub field: Field,
    pub values: Vec<Scalar>,
}

/// Written as a single-key map, e.g. `{cmp: {...}}` or `{all: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PredicateMap", into = "PredicateMap")]
pub enum Predicate {
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
    Cmp(Cmp),
    In(InSet),
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredicateMap {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    all: Option<Vec<Predicate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    any: Option<Vec<Predicate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    not: Option<Box<Predicate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cmp: Option<Cmp>,
    #[serde(default, rename = "in", skip_serializing_if = "Option::is_none")]
    in_set: Option<InSet>,
}

impl TryFrom<PredicateMap> for Predicate {
    type Error = String;

    fn try_from(m: PredicateMap) -> Result<Self, String> {
        let mut found = Vec::new();
        if let Some(v) = m.all {
            found.push(Predicate::All(v));
        }
        if let Some(v) = m.any {
            found.push(Predicate::Any(v));
        }
        if let Some(v) = m.not {
            found.push(Predicate::Not(v));
        }
        if let Some(v) = m.cmp {
            found.push(Predicate::Cmp(v));
        }
        if let Some(v) = m.in_set {
            found.push(Predicate::In(v));
        }
        match found.len() {
            1 => Ok(found.pop().expect("one")),
            0 => Err("predicate needs one of all, any, not, cmp, in".into()),
            _ => Err("predicate has more than one operator key".into()),
        }
    }
}

impl From<Predicate> for PredicateMap {
    fn from(p: Predicate) -> Self {
        let mut m = PredicateMap::default();
        match p {
            Predicate::All(v) => m.all = Some(v),
            Predicate::Any(v) => m.any = Some(v),
            Predicate::Not(v) => m.not = Some(v),
            Predicate::Cmp(v) => m.cmp = Some(v),
            Predicate::In(v) => m.in_set = Some(v),
        }
        m
    }
}

/// Partial budget: every present field is applied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leverage_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notional_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_rate_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slippage_cap_bps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_holding_time_sec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cooldown_sec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staging_slices: Option<u32>,
}

impl BudgetPatch {
    fn fields(&self) -> [(Option<f64>, fn(&mut BudgetVector) -> &mut f64); 6] {
        [
            (self.leverage_cap, |b| &mut b.leverage_cap),
            (self.notional_cap, |b| &mut b.notional_cap),
            (self.order_rate_cap, |b| &mut b.order_rate_cap),
            (self.slippage_cap_bps, |b| &mut b.slippage_cap_bps),
            (self.max_holding_time_sec, |b| &mut b.max_holding_time_sec),
            (self.cooldown_sec, |b| &mut b.cooldown_sec),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule {
    pub id: String,
    pub when: Predicate,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<BudgetPatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<BudgetPatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl PolicyRule {
    fn apply(&self, b: &BudgetVector, leverage_floor: f64) -> BudgetVector {
        let mut out = *b;
        if let Some(s) = &self.scale {
            for (v, get) in s.fields() {
                if let Some(v) = v {
                    *get(&mut out) *= v;
                }
            }
            if let Some(n) = s.staging_slices {
                out.staging_slices = out.staging_slices.saturating_mul(n).max(1);
            }
        }
        if let Some(s) = &self.set {
            for (v, get) in s.fields() {
                if let Some(v) = v {
                    *get(&mut out) = v;
                }
            }
            if let Some(n) = s.staging_slices {
                out.staging_slices = n.max(1);
            }
        }
        out.leverage_cap = out.leverage_cap.max(leverage_floor);
        out
    }
}

/// Everything a predicate can look at.
#[derive(Debug, Clone, Copy)]
pub struct RuleInput<'a> {
    pub regime: Regime,
    pub p_t: f64,
    pub trust: &'a TrustState,
    pub account: &'a AccountState,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleEvalError {
    #[error("rule {rule}: field {field:?} cannot be compared with {value:?} using {op:?}")]
    TypeMismatch {
        rule: String,
        field: Field,
        op: Op,
        value: Scalar,
    },
    #[error("rule {rule}: field {field:?} is not set")]
    Missing { rule: String, field: Field },
}

enum Val<'a> {
    Num(f64),
    Bool(bool),
    Str(&'a str),
}

fn field_value<'a>(f: Field, x: &RuleInput<'a>) -> Option<Val<'a>> {
    Some(match f {
        Field::Regime => Val::Str(x.regime.as_str()),
        Field::PT => Val::Num(x.p_t),
        Field::PProv => Val::Num(x.trust.p_prov),
        Field::RCap => Val::Num(x.trust.r_cap),
        Field::InjAlert => Val::Bool(x.trust.inj_alert),
        Field::NarrativeFlag => Val::Bool(x.trust.narrative_flag?),
        Field::Drawdown => Val::Num(x.account.drawdown),
        Field::MarginRatio => Val::Num(x.account.margin_ratio),
    })
}

fn compare(rule: &str, c: &Cmp, x: &RuleInput) -> Result<bool, RuleEvalError> {
    let mismatch = || RuleEvalError::TypeMismatch {
        rule: rule.to_string(),
        field: c.field,
        op: c.op,
        value: c.value.clone(),
    };
    let v = field_value(c.field, x).ok_or_else(|| RuleEvalError::Missing {
        rule: rule.to_string(),
        field: c.field,
    })?;
    let ord = match (&v, &c.value) {
        (Val::Num(a), Scalar::Num(b)) => a.partial_cmp(b).ok_or_else(mismatch)?,
        (Val::Bool(a), Scalar::Bool(b)) => a.cmp(b),
        (Val::Str(a), Scalar::Str(b)) => {
            if !matches!(c.op, Op::Eq | Op::Ne) {
                return Err(mismatch());
            }
            (*a).cmp(b.as_str())
        }
        _ => return Err(mismatch()),
    };
    if matches!(v, Val::Bool(_)) && !matches!(c.op, Op::Eq | Op::Ne) {
        return Err(mismatch());
    }
    use std::cmp::Ordering::*;
    Ok(match c.op {
        Op::Eq => ord == Equal,
        Op::Ne => ord != Equal,
        Op::Lt => ord == Less,
        Op::Le => ord != Greater,
        Op::Gt => ord == Greater,
        Op::Ge => ord != Less,
    })
}

pub fn eval_predicate(rule: &str, p: &Predicate, x: &RuleInput) -> Result<bool, RuleEvalError> {
    match p {
        Predicate::All(ps) => {
            for q in ps {
                if !eval_predicate(rule, q, x)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Predicate::Any(ps) => {
            for q in ps {
                if eval_predicate(rule, q, x)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Predicate::Not(q) => Ok(!eval_predicate(rule, q, x)?),
        Predicate::Cmp(c) => compare(rule, c, x),
        Predicate::In(s) => {
            for v in &s.values {
                let c = Cmp {
                    field: s.field,
                    op: Op::Eq,
                    value: v.clone(),
                };
                if compare(rule, &c, x)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleOutcome {
    pub decision: Decision,
    pub budget: BudgetVector,
    pub rule_id: Option<String>,
    pub reason: Option<String>,
}

pub fn try_evaluate_rules(
    rules: &[PolicyRule],
    x: &RuleInput,
    b: &BudgetVector,
    leverage_floor: f64,
) -> Result<RuleOutcome, RuleEvalError> {
    for r in rules {
        if eval_predicate(&r.id, &r.when, x)? {
            return Ok(RuleOutcome {
                decision: r.decision,
                budget: r.apply(b, leverage_floor),
                rule_id: Some(r.id.clone()),
                reason: Some(r.reason.clone().unwrap_or_else(|| r.id.clone())),
            });
        }
    }
    Ok(RuleOutcome {
        decision: Decision::Allow,
        budget: *b,
        rule_id: None,
        reason: None,
    })
}

/// First-match evaluation. Evaluation errors fail closed to BLOCK.
pub fn evaluate_rules(
    rules: &[PolicyRule],
    x: &RuleInput,
    b: &BudgetVector,
    leverage_floor: f64,
) -> RuleOutcome {
    try_evaluate_rules(rules, x, b, leverage_floor).unwrap_or_else(|e| RuleOutcome {
        decision: Decision::Block,
        budget: *b,
        rule_id: None,
        reason: Some(format!("rule error: {e}")),
    })
}

// --------------------------------------------------------------- loading

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    #[serde(default = "version_one")]
    pub version: u32,
    pub defaults: BudgetVector,
    #[serde(default)]
    pub g_table: GTable,
    #[serde(default)]
    pub h_params: HParams,
    #[serde(default)]
    pub q_params: QParams,
    #[serde(default = "floor_one")]
    pub leverage_floor: f64,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub rules: Vec<PolicyRule>,
}

fn version_one() -> u32 {
    1
}

fn floor_one() -> f64 {
    1.0
}

impl Policy {
    pub fn tightening(&self) -> TighteningConfig {
        TighteningConfig {
            g_table: self.g_table.clone(),
            h_params: self.h_params.clone(),
            q_params: self.q_params.clone(),
            leverage_floor: self.leverage_floor,
        }
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("policy serializes")
    }
}

impl Default for Policy {
    fn default() -> Self {
        load_policy(DEFAULT_POLICY_YAML).expect("built-in policy is valid")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyParseError {
    #[error("policy parse error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid policy: {0}")]
    Invalid(String),
}

pub const DEFAULT_POLICY_YAML: &str = include_str!("../../../configs/policy.yaml");

/// Parses and validates a policy document. Threshold names (`tau_limit`,
/// `tau_block`) used as comparison values resolve to their numbers.
pub fn load_policy(text: &str) -> Result<Policy, PolicyParseError> {
    let mut p: Policy = serde_yaml::from_str(text).map_err(|e| {
        let loc = e.location();
        PolicyParseError::Syntax {
            line: loc.as_ref().map_or(0, |l| l.line()),
            column: loc.as_ref().map_or(0, |l| l.column()),
            message: e.to_string(),
        }
    })?;
    let invalid = |m: String| Err(PolicyParseError::Invalid(m));
    let t = &p.thresholds;
    if !(0.0 <= t.tau_limit && t.tau_limit < t.tau_block && t.tau_block <= 1.0) {
        return invalid(format!(
            "need 0 <= tau_limit < tau_block <= 1, got ({}, {})",
            t.tau_limit, t.tau_block
        ));
    }
    if !p.defaults.is_valid() {
        return invalid("defaults must be nonnegative with staging_slices >= 1".into());
    }
    if !(p.leverage_floor > 0.0) {
        return invalid("leverage_floor must be > 0".into());
    }
    for (name, f) in [
        ("calm", &p.g_table.calm),
        ("volatile", &p.g_table.volatile),
        ("extreme", &p.g_table.extreme),
    ] {
        if f.multipliers.values().iter().any(|m| !(*m > 0.0 && *m <= 1.0)) {
            return invalid(format!("g_table.{name} multipliers must lie in (0, 1]"));
        }
        if f.staging_slices < 1 || f.cooldown_sec < 0.0 {
            return invalid(format!("g_table.{name} needs slices >= 1, cooldown >= 0"));
        }
    }
    let q = &p.q_params;
    if !(q.prov_pivot > 0.0
        && q.q_min > 0.0
        && q.q_min <= 1.0
        && (0.0..1.0).contains(&q.cap_risk_slope)
        && q.injection_multiplier > 0.0
        && q.injection_multiplier <= 1.0
        && q.provenance_weight.values().iter().all(|w| (0.0..=1.0).contains(w)))
    {
        return invalid("q_params out of range".into());
    }
    let h = &p.h_params;
    if !(h.h_min > 0.0 && h.h_min <= 1.0) {
        return invalid("h_params.h_min must lie in (0, 1]".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    let thresholds = p.thresholds.clone();
    for r in &mut p.rules {
        if !seen.insert(r.id.clone()) {
            return invalid(format!("duplicate rule id {}", r.id));
        }
        resolve_names(&mut r.when, &thresholds).map_err(PolicyParseError::Invalid)?;
    }
    Ok(p)
}

fn resolve_names(p: &mut Predicate, t: &Thresholds) -> Result<(), String> {
    let fix = |field: Field, v: &mut Scalar| -> Result<(), String> {
        if field == Field::Regime {
            if let Scalar::Str(s) = v {
                if Regime::parse(s).is_none() {
                    return Err(format!("unknown regime {s:?}"));
                }
            }
            return Ok(());
        }
        if let Scalar::Str(s) = v {
            *v = Scalar::Num(match s.as_str() {
                "tau_limit" => t.tau_limit,
                "tau_block" => t.tau_block,
                other => return Err(format!("unknown threshold name {other:?}")),
            });
        }
        Ok(())
    };
    match p {
        Predicate::All(ps) | Predicate::Any(ps) => ps.iter_mut().try_for_each(|q| resolve_names(q, t)),
        Predicate::Not(q) => resolve_names(q, t),
        Predicate::Cmp(c) => fix(c.field, &mut c.value),
        Predicate::In(s) => s.values.iter_mut().try_for_each(|v| fix(s.field, v)),
    }
}
