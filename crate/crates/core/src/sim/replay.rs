//! The per-bar replay loop.
//!
//! Each bar: mark to close, apply funding, check liquidation, apply the
//! StaticOMS stop-loss, then gate and fill the strategy's orders followed by
//! any attack children scheduled for the bar. Every gated request yields one
//! [`ActionRecord`] carrying its label.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{gen_attack_stream, AttackConfig, AttackFamily, BarInfo};
use crate::bar::{check_contiguous, validate_series, BarError, ReplayBar};
use crate::contract::{
    ActionVector, AuditRecord, Decision, ExecutionContext, ExecutionRequest, Intent, Side, TrustState,
    DEFAULT_ACCOUNT, DEFAULT_TOOL,
};
use crate::dg::{
    attack_success, dg_loss, dg_rate, false_block, out_of_scope, ActionLabel, AttemptedAction,
    IntendedPolicySpec, ScopeContext,
};
use crate::enforcement::{Gate, GateConfig, Variant};
use crate::market_state::{build_market_states, FeatureConfig, MarketError};
use crate::metrics::{cvar, max_drawdown, simple_returns, MetricsReport};
use crate::policy::Policy;
use crate::sim::account::{CashLedger, LiquidationEvent, SimAccount};
use crate::sim::fill::{execute_fill, FillModel, FillOutcome, Order};
use crate::sim::margin::{MarginError, MarginTable};
use crate::sim::strategy::{on_bar, Route, StrategyConfig};
use crate::trader_state::{extract_features, risk_score, CalibratedModel, FeatureParams, TradeRecord};

/// Trust inputs per skill id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustConfig {
    /// skill id -> (p_prov, r_cap)
    pub registry: BTreeMap<String, (f64, f64)>,
    pub unknown: (f64, f64),
    /// Chance the injection detector fires on an injected attempt.
    pub injection_detect_prob: f64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            registry: [("core-strategy".to_string(), (1.0, 0.0))].into_iter().collect(),
            unknown: (0.3, 0.6),
            injection_detect_prob: 0.5,
        }
    }
}

impl TrustConfig {
    pub fn state(&self, skill: Option<&str>, inj_alert: bool) -> TrustState {
        let (p, r) = skill
            .and_then(|s| self.registry.get(s))
            .copied()
            .unwrap_or(self.unknown);
        TrustState {
            p_prov: p,
            r_cap: r,
            inj_alert,
            narrative_flag: None,
        }
    }
}

/// Loss attributed to an executed action: the next-bar loss on its fill,
/// plus `liquidation_mult * step_loss_cap * initial_equity` when the next
/// bar liquidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossProxy {
    pub step_loss_cap: f64,
    pub liquidation_mult: f64,
}

impl Default for LossProxy {
    fn default() -> Self {
        LossProxy {
            step_loss_cap: 0.01,
            liquidation_mult: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub initial_equity: f64,
    pub symbol: String,
    pub venue: String,
    /// StaticOMS closes a position once its unrealized loss exceeds this
    /// fraction of equity.
    pub stop_loss_frac: f64,
    pub fill: FillModel,
    pub loss: LossProxy,
    pub false_block_strict: bool,
    pub dg_eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            initial_equity: 10_000.0,
            symbol: "BTCUSDT".into(),
            venue: "binance-usdm".into(),
            stop_loss_frac: 0.02,
            fill: FillModel::default(),
            loss: LossProxy::default(),
            false_block_strict: false,
            dg_eps: 1e-12,
        }
    }
}

/// Everything one replay needs besides the bars.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayParams {
    pub variant: Variant,
    pub seed: u64,
    pub interval_ms: i64,
    pub sim: SimConfig,
    pub strategy: StrategyConfig,
    pub attacks: AttackConfig,
    pub features: FeatureConfig,
    pub gate: GateConfig,
    pub policy: Policy,
    pub spec: IntendedPolicySpec,
    pub trader_model: CalibratedModel,
    pub trader_params: FeatureParams,
    pub trust: TrustConfig,
    pub margin: MarginTable,
}

impl ReplayParams {
    pub fn new(variant: Variant, seed: u64, interval_ms: i64) -> Self {
        ReplayParams {
            variant,
            seed,
            interval_ms,
            sim: SimConfig::default(),
            strategy: StrategyConfig::default(),
            attacks: AttackConfig::default(),
            features: FeatureConfig::default(),
            gate: GateConfig::default(),
            policy: Policy::default(),
            spec: IntendedPolicySpec::default(),
            trader_model: CalibratedModel::default(),
            trader_params: FeatureParams::default(),
            trust: TrustConfig::default(),
            margin: MarginTable::fallback(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("data gap: {0}")]
    DataGap(BarError),
    #[error("bad bars: {0}")]
    BadBars(BarError),
    #[error("feature build failed: {0}")]
    Features(#[from] MarketError),
    #[error("margin table: {0}")]
    Margin(#[from] MarginError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no bars")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub audit_seq: u64,
    pub bar_index: usize,
    pub timestamp_ms: i64,
    pub symbol: String,
    pub venue: String,
    pub intent: Intent,
    pub side: Side,
    pub strategy_id: String,
    pub requested: ActionVector,
    pub decision: Decision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective: Option<ActionVector>,
    pub fill: FillOutcome,
    /// Dispatched to a book the replay does not simulate.
    pub off_book: bool,
    pub label: ActionLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub time_ms: i64,
    pub equity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub bar_index: usize,
    pub timestamp_ms: i64,
    pub unrealized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    /// Initial point followed by one point per bar close.
    pub equity: Vec<EquityPoint>,
    pub actions: Vec<ActionRecord>,
    pub audit: Vec<AuditRecord>,
    pub liquidations: Vec<LiquidationEvent>,
    pub stops: Vec<StopEvent>,
    pub ledger: CashLedger,
    pub initial_wallet: f64,
    pub final_wallet: f64,
    /// Largest per-step deviation of the cash identity seen during the run.
    pub max_cash_residual: f64,
    pub metrics: MetricsReport,
    pub flags: Vec<String>,
}

impl RunResult {
    pub fn labels(&self) -> Vec<ActionLabel> {
        self.actions.iter().map(|a| a.label.clone()).collect()
    }

    pub fn equity_values(&self) -> Vec<f64> {
        self.equity.iter().map(|p| p.equity).collect()
    }

    pub fn executed_notional(&self) -> f64 {
        self.actions
            .iter()
            .filter_map(|a| a.fill.trade())
            .map(|t| (t.qty_delta * t.price).abs())
            .sum()
    }
}

fn on_book(r: &ExecutionRequest, sim: &SimConfig) -> bool {
    r.symbol == sim.symbol && r.venue == sim.venue && r.account() == DEFAULT_ACCOUNT && r.tool() == DEFAULT_TOOL
}

struct Pending {
    action: usize,
    bar: usize,
    dq: f64,
    fill: f64,
    fee: f64,
}

/// Runs one replay. Deterministic in `(params, bars)`.
pub fn run_replay(params: &ReplayParams, bars: &[ReplayBar]) -> Result<RunResult, ReplayError> {
    if bars.is_empty() {
        return Err(ReplayError::Empty);
    }
    if !params.sim.fill.is_valid() {
        return Err(ReplayError::Config("fill model has a negative or non-finite parameter".into()));
    }
    if !(params.sim.initial_equity > 0.0) {
        return Err(ReplayError::Config("initial_equity must be positive".into()));
    }
    validate_series(bars).map_err(ReplayError::BadBars)?;
    check_contiguous(bars, params.interval_ms).map_err(ReplayError::DataGap)?;
    let markets = if bars.len() >= 2 {
        build_market_states(bars, &params.features)?
    } else {
        vec![crate::contract::MarketState::calm(bars[0].close)]
    };

    let sim = &params.sim;
    let route = Route {
        symbol: sim.symbol.clone(),
        venue: sim.venue.clone(),
    };
    let close_ms = |i: usize| bars[i].open_time_ms + params.interval_ms;
    let infos: Vec<BarInfo> = bars
        .iter()
        .enumerate()
        .map(|(i, b)| BarInfo {
            open_time_ms: b.open_time_ms,
            close_time_ms: close_ms(i),
            regime: markets[i].regime,
        })
        .collect();
    let attacks = gen_attack_stream(&params.attacks, params.seed, &params.spec, &infos, 1_000_000);
    let mut attacks_by_bar: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for a in &attacks {
        attacks_by_bar.entry(a.bar_index).or_default().push(a);
    }
    // Detector outcomes drawn once per attempt from their own stream.
    let mut inj_rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5ae0_1a7e);
    let inj: BTreeMap<u64, bool> = attacks
        .iter()
        .map(|a| (a.attempt_id, inj_rng.gen_bool(params.trust.injection_detect_prob.clamp(0.0, 1.0))))
        .collect();

    let mut gate = Gate::new(params.variant, params.policy.clone(), params.spec.clone(), params.gate.clone());
    let mut acct = SimAccount::new(sim.initial_equity);
    let mut equity = vec![EquityPoint {
        time_ms: bars[0].open_time_ms,
        equity: acct.equity(),
    }];
    let mut actions: Vec<ActionRecord> = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();
    let mut liquidations = Vec::new();
    let mut liq_bars = Vec::new();
    let mut stops = Vec::new();
    let mut trades: BTreeMap<String, Vec<TradeRecord>> = BTreeMap::new();
    let mut pnl_hist: Vec<f64> = Vec::new();
    let mut max_residual: f64 = 0.0;
    let mut flags = Vec::new();
    if params.margin.fallback {
        flags.push("margin_tiers_fallback".to_string());
    }
    let mut next_legit_id = 0u64;
    let w_rate_ms = (params.spec.caps.rate_window_sec * 1000.0) as i64;

    for (i, bar) in bars.iter().enumerate() {
        let t_close = close_ms(i);
        acct.mark(&sim.symbol, bar.close);
        if bar.funding_rate != 0.0 {
            acct.apply_funding(&sim.symbol, bar.funding_rate);
        }
        if let Some(ev) = acct.check_liquidation(&params.margin, sim.fill.liquidation_penalty_bps, t_close)? {
            liquidations.push(ev);
            liq_bars.push(i);
        }
        if params.variant == Variant::StaticOms {
            if let Some(p) = acct.positions.get(&sim.symbol) {
                let u = p.unrealized();
                if u < -sim.stop_loss_frac * acct.equity().max(0.0) {
                    let o = Order {
                        symbol: &sim.symbol,
                        intent: Intent::Close,
                        side: p.side,
                        notional: 0.0,
                        leverage: p.leverage,
                        slippage_cap_bps: f64::INFINITY,
                        timestamp_ms: t_close,
                    };
                    execute_fill(&mut acct, &o, bar.close, bar.volume * bar.close, &sim.fill);
                    stops.push(StopEvent {
                        bar_index: i,
                        timestamp_ms: t_close,
                        unrealized: u,
                    });
                }
            }
        }
        acct.update_peak();

        let held = acct.positions.get(&sim.symbol).map(|p| p.side);
        let mut queue: Vec<(u64, Option<AttackFamily>, bool, ExecutionRequest)> =
            on_bar(&params.strategy, &route, bars, i, t_close, held)
                .into_iter()
                .map(|r| {
                    next_legit_id += 1;
                    (next_legit_id, None, false, r)
                })
                .collect();
        for a in attacks_by_bar.get(&i).into_iter().flatten() {
            let alert = inj.get(&a.attempt_id).copied().unwrap_or(false);
            for c in &a.children {
                queue.push((a.attempt_id, Some(a.family), alert, c.clone()));
            }
        }
        queue.sort_by_key(|q| q.3.timestamp_ms);

        for (attempt_id, family, alert, req) in queue {
            let now = req.timestamp_ms;
            let recent: Vec<i64> = trades
                .values()
                .flatten()
                .filter(|t| t.timestamp_ms > now - w_rate_ms && t.timestamp_ms <= now)
                .map(|t| t.timestamp_ms)
                .collect();
            let tail = pnl_hist[pnl_hist.len().saturating_sub(params.trader_params.window_n)..].to_vec();
            let account = acct.snapshot(recent, tail, now);
            let history = trades.get(&req.strategy_id).map(Vec::as_slice).unwrap_or(&[]);
            let features = extract_features(history, &account, now, &params.trader_params);
            let p_t = risk_score(&features, &params.trader_model).unwrap_or(1.0);
            let ctx = ExecutionContext {
                account: account.clone(),
                market: markets[i],
                trust: params.trust.state(req.meta.skill_id.as_deref(), family.is_some() && alert),
                risk_score: p_t,
            };

            let sc = ScopeContext {
                regime: markets[i].regime,
                margin_ratio: account.margin_ratio,
                drawdown: account.drawdown,
                now_ms: now,
                last_open_ms: gate.temporal().last_action_ms(&req.symbol),
                orders_in_window: gate.temporal().orders_in_window(&req.symbol, now, w_rate_ms),
                open_positions: account.positions.len(),
                has_position_in_symbol: account.position(&req.symbol).is_some(),
            };
            let asked = out_of_scope(&AttemptedAction::requested(&req), &params.spec, &sc);

            let d = gate.decide(&req, &ctx);
            let executed = d.decision != Decision::Block;
            let record = gate.audit().records().last().expect("decide appends");
            let effective = if executed { d.effective_action() } else { None };
            let (exec_in_scope, caps_violated) = match effective {
                Some(e) => {
                    let v = out_of_scope(
                        &AttemptedAction {
                            request: &req,
                            leverage: e.leverage,
                            notional: e.notional,
                            slippage_bps: e.slippage_bps,
                        },
                        &params.spec,
                        &sc,
                    );
                    let over = record.budgets.is_some_and(|b| {
                        crate::dg::is_risk_on(req.intent) && !b.contains(&e)
                    });
                    (v.in_scope, over)
                }
                None => (false, false),
            };

            let off_book = !on_book(&req, sim);
            let fill = if executed && !off_book {
                let o = Order::from_decision(&sim.symbol, req.intent, req.side, &d, now);
                execute_fill(&mut acct, &o, bar.close, bar.volume * bar.close, &sim.fill)
            } else {
                FillOutcome::NoTrade
            };
            if let Some(t) = fill.trade() {
                let rec = TradeRecord {
                    timestamp_ms: now,
                    requested_leverage: req.requested_leverage,
                    // Opening fills realize nothing and are not losses.
                    pnl: if t.realized != 0.0 { t.realized - t.fee } else { 0.0 },
                };
                pnl_hist.push(rec.pnl);
                trades.entry(req.strategy_id.clone()).or_default().push(rec);
                pending.push(Pending {
                    action: actions.len(),
                    bar: i,
                    dq: t.qty_delta,
                    fill: t.price,
                    fee: t.fee,
                });
            }

            let label = ActionLabel {
                attempt_id,
                is_attack: family.is_some(),
                family,
                in_scope: asked.in_scope,
                violation_class: asked.class,
                violations: asked.violations,
                decision: d.decision,
                reason: d.reason.clone(),
                executed,
                executed_in_scope: executed && exec_in_scope,
                caps_violated,
                loss_contrib: 0.0,
            };
            actions.push(ActionRecord {
                audit_seq: d.audit_seq,
                bar_index: i,
                timestamp_ms: now,
                symbol: req.symbol.clone(),
                venue: req.venue.clone(),
                intent: req.intent,
                side: req.side,
                strategy_id: req.strategy_id.clone(),
                requested: req.action(),
                decision: d.decision,
                effective,
                fill,
                off_book,
                label,
            });
        }

        acct.update_peak();
        let residual = (acct.wallet - acct.initial_wallet - acct.ledger.net()).abs();
        max_residual = max_residual.max(residual);
        let e = acct.equity();
        equity.push(EquityPoint {
            time_ms: t_close,
            equity: e.max(0.0),
        });
    }

    // Loss proxy needs the next bar's close and liquidation status.
    let penalty = sim.loss.liquidation_mult * sim.loss.step_loss_cap * sim.initial_equity;
    for p in pending {
        let next = (p.bar + 1).min(bars.len() - 1);
        let step = p.dq * (bars[next].close - p.fill) - p.fee;
        let mut loss = (-step).max(0.0);
        if p.bar + 1 < bars.len() && liq_bars.contains(&(p.bar + 1)) {
            loss += penalty;
        }
        actions[p.action].label.loss_contrib = loss;
    }

    let audit = gate.into_audit().into_records();
    let labels: Vec<ActionLabel> = actions.iter().map(|a| a.label.clone()).collect();
    let eq: Vec<f64> = equity.iter().map(|p| p.equity).collect();
    let rets = simple_returns(&eq);
    let mdd = max_drawdown(&eq).map_err(|e| ReplayError::Config(e.to_string()))?;
    let (c95, c99) = if rets.is_empty() {
        (0.0, 0.0)
    } else {
        (cvar(&rets, 0.95).unwrap_or(0.0), cvar(&rets, 0.99).unwrap_or(0.0))
    };
    let n_attempts = labels
        .iter()
        .filter(|l| l.is_attack)
        .map(|l| l.attempt_id)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let final_equity = *eq.last().expect("nonempty");
    let metrics = MetricsReport {
        variant: params.variant.as_str().to_string(),
        mdd,
        cvar_95: c95,
        cvar_99: c99,
        liquidation_count: acct.liquidations,
        attack_success: attack_success(&labels).ok(),
        false_block: false_block(&labels, sim.false_block_strict).ok(),
        mean_latency_ms: crate::metrics::latency_overhead(&audit).unwrap_or(0.0),
        dg_rate: dg_rate(&labels).ok(),
        dg_loss: dg_loss(&labels, sim.dg_eps).ok(),
        n_requests: labels.len(),
        n_attack_attempts: n_attempts,
        final_equity,
        total_return: final_equity / sim.initial_equity - 1.0,
    };

    Ok(RunResult {
        variant: params.variant,
        seed: params.seed,
        equity,
        actions,
        audit,
        liquidations,
        stops,
        ledger: acct.ledger.clone(),
        initial_wallet: acct.initial_wallet,
        final_wallet: acct.wallet,
        max_cash_residual: max_residual,
        metrics,
        flags,
    })
}
