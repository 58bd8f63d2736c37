//! Seeded attack generators. Attempts are interleaved with the strategy's
//! own orders on a fixed schedule: one attempt every `every_k_bars` bars,
//! families taken round-robin.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contract::{
    ExecutionRequest, Intent, NotionalMode, OrderType, Regime, RequestMeta, Side,
};
use crate::dg::IntendedPolicySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    ParamEscalation,
    Flooding,
    ToolMisuse,
    StateViolation,
    NarrativeFlip,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 5] = [
        AttackFamily::ParamEscalation,
        AttackFamily::Flooding,
        AttackFamily::ToolMisuse,
        AttackFamily::StateViolation,
        AttackFamily::NarrativeFlip,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackFamily::ParamEscalation => "param_escalation",
            AttackFamily::Flooding => "flooding",
            AttackFamily::ToolMisuse => "tool_misuse",
            AttackFamily::StateViolation => "state_violation",
            AttackFamily::NarrativeFlip => "narrative_flip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub enabled: bool,
    pub every_k_bars: usize,
    pub families: Vec<AttackFamily>,
    pub escalation_factors: Vec<f64>,
    pub flood_burst: usize,
    pub flood_spacing_sec: f64,
    pub flip_span: usize,
    pub flip_spacing_sec: f64,
    /// Skill id stamped on attack requests; it is unknown to the trust registry.
    pub skill_id: String,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            enabled: true,
            every_k_bars: 10,
            families: AttackFamily::ALL.to_vec(),
            escalation_factors: vec![1.5, 2.0, 5.0, 10.0],
            flood_burst: 10,
            flood_spacing_sec: 1.0,
            flip_span: 8,
            flip_spacing_sec: 10.0,
            skill_id: "unverified-plugin".into(),
        }
    }
}

/// One attack attempt: one or more child orders sharing an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackAttempt {
    pub attempt_id: u64,
    pub family: AttackFamily,
    pub bar_index: usize,
    pub children: Vec<ExecutionRequest>,
}

/// Bar facts the planner may condition on.
#[derive(Debug, Clone, Copy)]
pub struct BarInfo {
    pub open_time_ms: i64,
    pub close_time_ms: i64,
    pub regime: Regime,
}

const TOOL_MISUSE_KINDS: [&str; 5] = ["venue", "symbol", "account", "intent", "tool"];

struct Builder<'a> {
    spec: &'a IntendedPolicySpec,
    cfg: &'a AttackConfig,
    symbol: String,
    venue: String,
    account: String,
}

impl Builder<'_> {
    fn base(&self, family: AttackFamily, t: i64, side: Side) -> ExecutionRequest {
        ExecutionRequest {
            symbol: self.symbol.clone(),
            venue: self.venue.clone(),
            timestamp_ms: t,
            intent: Intent::Open,
            side,
            requested_notional: 0.3,
            notional_mode: NotionalMode::Fraction,
            requested_leverage: 1.0,
            order_type: OrderType::Market,
            max_slippage_bps: 20.0,
            strategy_id: format!("attack:{}", family.as_str()),
            meta: RequestMeta {
                skill_id: Some(self.cfg.skill_id.clone()),
                source: Some("injected".into()),
                account: Some(self.account.clone()),
                tool: Some("order".into()),
            },
        }
    }

    fn build(&self, family: AttackFamily, t0: i64, rng: &mut ChaCha8Rng) -> Vec<ExecutionRequest> {
        let caps = &self.spec.caps;
        let side = if rng.gen_bool(0.5) { Side::Long } else { Side::Short };
        match family {
            AttackFamily::ParamEscalation => {
                let f = *self.cfg.escalation_factors.choose(rng).unwrap_or(&2.0);
                let mut r = self.base(family, t0, side);
                r.requested_leverage = caps.max_leverage * f;
                r.requested_notional = rng.gen_range(0.2..0.5);
                r.max_slippage_bps = if rng.gen_bool(0.5) {
                    caps.max_slippage_bps * f
                } else {
                    rng.gen_range(10.0..50.0)
                };
                vec![r]
            }
            AttackFamily::Flooding => {
                let lev = rng.gen_range(1.0..2.0);
                let n = rng.gen_range(0.2..0.4);
                (0..self.cfg.flood_burst)
                    .map(|i| {
                        let dt = (i as f64 * self.cfg.flood_spacing_sec * 1000.0) as i64;
                        let mut r = self.base(family, t0 + dt, side);
                        r.requested_leverage = lev;
                        r.requested_notional = n;
                        r
                    })
                    .collect()
            }
            AttackFamily::ToolMisuse => {
                let mut r = self.base(family, t0, side);
                r.requested_leverage = rng.gen_range(1.0..2.0);
                match *TOOL_MISUSE_KINDS.choose(rng).expect("nonempty") {
                    "venue" => r.venue = "offshore-perp-x".into(),
                    "symbol" => r.symbol = "SHADOWUSDT".into(),
                    "account" => r.meta.account = Some("sub-account-7".into()),
                    "intent" => r.intent = Intent::Modify,
                    _ => r.meta.tool = Some("transfer".into()),
                }
                vec![r]
            }
            AttackFamily::StateViolation => {
                let mut r = self.base(family, t0, side);
                r.requested_leverage = caps.max_leverage;
                r.requested_notional = caps.max_notional;
                r.max_slippage_bps = caps.max_slippage_bps * 0.5;
                vec![r]
            }
            AttackFamily::NarrativeFlip => {
                let lev = rng.gen_range(1.0..2.0);
                (0..self.cfg.flip_span)
                    .map(|i| {
                        let dt = (i as f64 * self.cfg.flip_spacing_sec * 1000.0) as i64;
                        let s = if i % 2 == 0 { side } else { side.opposite() };
                        let mut r = self.base(family, t0 + dt, s);
                        r.requested_leverage = lev;
                        r
                    })
                    .collect()
            }
        }
    }
}

/// Plans the whole attack stream for a replay. State-violation attempts
/// scheduled on a calm bar wait for the next volatile or extreme bar; one
/// still pending when the data ends is never emitted.
pub fn gen_attack_stream(
    cfg: &AttackConfig,
    seed: u64,
    spec: &IntendedPolicySpec,
    bars: &[BarInfo],
    first_attempt_id: u64,
) -> Vec<AttackAttempt> {
    if !cfg.enabled || cfg.families.is_empty() || cfg.every_k_bars == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = |s: &std::collections::BTreeSet<String>, d: &str| {
        s.iter().next().cloned().unwrap_or_else(|| d.to_string())
    };
    let b = Builder {
        spec,
        cfg,
        symbol: first(&spec.allow.symbols, "BTCUSDT"),
        venue: first(&spec.allow.venues, "binance-usdm"),
        account: first(&spec.allow.accounts, "main"),
    };
    let mut out = Vec::new();
    let mut turn = 0usize;
    let mut pending_state = 0usize;
    let mut next_id = first_attempt_id;
    for (i, bar) in bars.iter().enumerate() {
        // Children land just after the strategy's own order at bar close.
        let t0 = bar.close_time_ms + 1000;
        let mut fams = Vec::new();
        if bar.regime != Regime::Calm && pending_state > 0 {
            pending_state -= 1;
            fams.push(AttackFamily::StateViolation);
        }
        if (i + 1) % cfg.every_k_bars == 0 {
            let f = cfg.families[turn % cfg.families.len()];
            turn += 1;
            if f == AttackFamily::StateViolation && bar.regime == Regime::Calm {
                pending_state += 1;
            } else {
                fams.push(f);
            }
        }
        for f in fams {
            out.push(AttackAttempt {
                attempt_id: next_id,
                family: f,
                bar_index: i,
                children: b.build(f, t0, &mut rng),
            });
            next_id += 1;
        }
    }
    out
}

/// Convenience for a single family.
pub fn gen_attacks(
    family: AttackFamily,
    seed: u64,
    cfg: &AttackConfig,
    spec: &IntendedPolicySpec,
    bars: &[BarInfo],
) -> Vec<AttackAttempt> {
    let cfg = AttackConfig {
        families: vec![family],
        ..cfg.clone()
    };
    gen_attack_stream(&cfg, seed, spec, bars, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bars(n: usize, regime: impl Fn(usize) -> Regime) -> Vec<BarInfo> {
        (0..n)
            .map(|i| BarInfo {
                open_time_ms: i as i64 * 900_000,
                close_time_ms: (i as i64 + 1) * 900_000 - 1,
                regime: regime(i),
            })
            .collect()
    }

    #[test]
    fn same_seed_same_stream() {
        let spec = IntendedPolicySpec::default();
        let b = bars(500, |i| if i % 37 < 5 { Regime::Extreme } else { Regime::Calm });
        let a = gen_attack_stream(&AttackConfig::default(), 9, &spec, &b, 0);
        let c = gen_attack_stream(&AttackConfig::default(), 9, &spec, &b, 0);
        assert_eq!(a, c);
        assert_ne!(a, gen_attack_stream(&AttackConfig::default(), 10, &spec, &b, 0));
        assert!(a.len() >= 45);
    }

    #[test]
    fn escalation_multiplies_caps() {
        let spec = IntendedPolicySpec::default();
        let cfg = AttackConfig {
            escalation_factors: vec![5.0],
            ..Default::default()
        };
        let s = gen_attacks(AttackFamily::ParamEscalation, 1, &cfg, &spec, &bars(30, |_| Regime::Calm));
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|a| a.children[0].requested_leverage == 15.0));
    }

    #[test]
    fn flood_bursts_exceed_rate() {
        let spec = IntendedPolicySpec::default();
        let s = gen_attacks(AttackFamily::Flooding, 1, &AttackConfig::default(), &spec, &bars(10, |_| Regime::Calm));
        let kids = &s[0].children;
        assert_eq!(kids.len(), 10);
        let span = kids.last().unwrap().timestamp_ms - kids[0].timestamp_ms;
        assert!(span < 60_000);
        // With a cap of 4 per 60 s, every child after the fourth is over.
        let over = (0..kids.len()).filter(|&i| i >= spec.caps.max_order_rate as usize).count();
        assert!(over >= 6);
    }

    #[test]
    fn state_violation_waits_for_stress() {
        let spec = IntendedPolicySpec::default();
        let b = bars(40, |i| if i == 25 { Regime::Volatile } else { Regime::Calm });
        let s = gen_attacks(AttackFamily::StateViolation, 3, &AttackConfig::default(), &spec, &b);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].bar_index, 25);
    }

    #[test]
    fn flips_alternate() {
        let spec = IntendedPolicySpec::default();
        let s = gen_attacks(AttackFamily::NarrativeFlip, 2, &AttackConfig::default(), &spec, &bars(10, |_| Regime::Calm));
        let sides: Vec<Side> = s[0].children.iter().map(|c| c.side).collect();
        assert_eq!(sides.len(), 8);
        assert!(sides.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn tool_misuse_is_never_allowlisted() {
        let spec = IntendedPolicySpec::default();
        let s = gen_attacks(AttackFamily::ToolMisuse, 4, &AttackConfig::default(), &spec, &bars(1000, |_| Regime::Calm));
        assert!(s.iter().all(|a| !spec.allow.misses(&a.children[0]).is_empty()));
    }
}
