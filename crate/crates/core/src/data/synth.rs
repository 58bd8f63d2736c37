//! Seeded synthetic bars: a geometric random walk whose volatility follows a
//! regime script, with periodic funding events.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bar::ReplayBar;
use crate::contract::Regime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub regime: Regime,
    pub bars: usize,
    /// Per-bar log-return standard deviation; defaults by regime when absent.
    #[serde(default)]
    pub vol: Option<f64>,
}

impl Segment {
    pub fn new(regime: Regime, bars: usize) -> Self {
        Segment {
            regime,
            bars,
            vol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub start_ms: i64,
    pub interval_ms: i64,
    pub start_price: f64,
    pub base_volume: f64,
    pub vol_calm: f64,
    pub vol_volatile: f64,
    pub vol_extreme: f64,
    pub funding_every: usize,
    pub funding_mean: f64,
    pub funding_sd: f64,
    /// Cycled until `n_bars` are produced.
    pub script: Vec<Segment>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            // 2025-09-01T00:00:00Z
            start_ms: 1_756_684_800_000,
            interval_ms: 900_000,
            start_price: 60_000.0,
            base_volume: 2_500.0,
            vol_calm: 0.002,
            vol_volatile: 0.006,
            vol_extreme: 0.02,
            funding_every: 32,
            funding_mean: 0.0001,
            funding_sd: 0.00005,
            script: vec![
                Segment::new(Regime::Calm, 500),
                Segment::new(Regime::Volatile, 150),
                Segment::new(Regime::Calm, 300),
                Segment::new(Regime::Extreme, 80),
                Segment::new(Regime::Calm, 200),
                Segment::new(Regime::Volatile, 100),
            ],
        }
    }
}

impl SynthConfig {
    pub fn vol_for(&self, s: &Segment) -> f64 {
        s.vol.unwrap_or(match s.regime {
            Regime::Calm => self.vol_calm,
            Regime::Volatile => self.vol_volatile,
            Regime::Extreme => self.vol_extreme,
        })
    }

    /// Scripted regime and vol for every bar.
    pub fn schedule(&self, n_bars: usize) -> Vec<(Regime, f64)> {
        let total: usize = self.script.iter().map(|s| s.bars).sum();
        if total == 0 {
            return vec![(Regime::Calm, self.vol_calm); n_bars];
        }
        self.script
            .iter()
            .flat_map(|s| std::iter::repeat_n((s.regime, self.vol_for(s)), s.bars))
            .cycle()
            .take(n_bars)
            .collect()
    }
}

/// Deterministic in `(seed, n_bars, cfg)`.
pub fn synth_generate(seed: u64, n_bars: usize, cfg: &SynthConfig) -> Vec<ReplayBar> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let mut price = cfg.start_price;
    let sched = cfg.schedule(n_bars);
    let mut out = Vec::with_capacity(n_bars);
    for (i, &(_, vol)) in sched.iter().enumerate() {
        let open = price;
        let close = open * (vol * z.sample(&mut rng)).exp();
        let wick_hi = (vol * z.sample(&mut rng)).abs() * 0.5;
        let wick_lo = (vol * z.sample(&mut rng)).abs() * 0.5;
        let high = open.max(close) * (1.0 + wick_hi);
        let low = open.min(close) * (1.0 - wick_lo).max(0.5);
        let vol_scale = if cfg.vol_calm > 0.0 { (vol / cfg.vol_calm).max(0.1) } else { 1.0 };
        let volume = cfg.base_volume * vol_scale * (0.2 * z.sample(&mut rng)).exp();
        let funding_rate = if cfg.funding_every > 0 && i % cfg.funding_every == 0 {
            cfg.funding_mean + cfg.funding_sd * z.sample(&mut rng)
        } else {
            0.0
        };
        out.push(ReplayBar {
            open_time_ms: cfg.start_ms + i as i64 * cfg.interval_ms,
            open,
            high,
            low,
            close,
            volume,
            funding_rate,
        });
        price = close;
    }
    out
}
