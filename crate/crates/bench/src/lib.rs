//! Shared fixtures for the benchmarks.

use sae_core::contract::{
    AccountState, ExecutionContext, ExecutionRequest, Intent, MarketState, NotionalMode, OrderType, Regime,
    RequestMeta, Side, TrustState,
};
use sae_core::data::{synth_generate, SynthConfig};
use sae_core::ReplayBar;

pub const T0_MS: i64 = 1_756_684_800_000;

/// A momentum open asking for more than the default budget allows.
pub fn open_request(leverage: f64) -> ExecutionRequest {
    ExecutionRequest {
        symbol: "BTCUSDT".into(),
        venue: "binance-usdm".into(),
        timestamp_ms: T0_MS,
        intent: Intent::Open,
        side: Side::Long,
        requested_notional: 0.5,
        notional_mode: NotionalMode::Fraction,
        requested_leverage: leverage,
        order_type: OrderType::Market,
        max_slippage_bps: 80.0,
        strategy_id: "momentum".into(),
        meta: RequestMeta::default(),
    }
}

pub fn context(regime: Regime, risk_score: f64) -> ExecutionContext {
    ExecutionContext {
        account: AccountState::new(9_500.0, 10_000.0),
        market: MarketState {
            regime,
            ..MarketState::calm(60_000.0)
        },
        trust: TrustState {
            p_prov: 0.9,
            r_cap: 0.0,
            inj_alert: false,
            narrative_flag: None,
        },
        risk_score,
    }
}

/// Seeded synthetic 15-minute bars.
pub fn bars(seed: u64, n: usize) -> Vec<ReplayBar> {
    synth_generate(seed, n, &SynthConfig::default())
}
