//! Per-bar market features: log returns, realized volatility, the liquidity
//! proxy, funding alignment and regime classification. Everything here is a
//! pure function of the bar series.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bar::ReplayBar;
use crate::contract::{MarketState, Regime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub w_sigma: usize,
    pub ema_period: usize,
    pub eps: f64,
    pub tau_sigma_1: f64,
    pub tau_sigma_2: f64,
    pub tau_f: f64,
    pub tau_lambda: f64,
    pub vol_norm_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            w_sigma: 60,
            ema_period: 20,
            eps: 1e-12,
            tau_sigma_1: 1.0,
            tau_sigma_2: 2.0,
            tau_f: 0.01,
            tau_lambda: 0.0,
            vol_norm_window: 480,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), MarketError> {
        let bad = |m: &str| Err(MarketError::Config(m.to_string()));
        if self.w_sigma < 1 {
            return bad("w_sigma must be >= 1");
        }
        if self.ema_period < 1 {
            return bad("ema_period must be >= 1");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        if !(self.tau_sigma_1 < self.tau_sigma_2) {
            return bad("tau_sigma_1 must be < tau_sigma_2");
        }
        if self.vol_norm_window < 1 {
            return bad("vol_norm_window must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("price at index {0} is not positive")]
    NonPositivePrice(usize),
    #[error("need at least {need} points, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("empty series")]
    EmptySeries,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bar times are not strictly increasing at index {0}")]
    UnsortedBars(usize),
    #[error("invalid feature config: {0}")]
    Config(String),
}

pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>, MarketError> {
    if prices.len() < 2 {
        return Err(MarketError::TooShort {
            need: 2,
            got: prices.len(),
        });
    }
    if let Some(i) = prices.iter().position(|p| !(*p > 0.0)) {
        return Err(MarketError::NonPositivePrice(i));
    }
    // ln_1p of the relative change keeps small returns accurate.
    Ok(prices.windows(2).map(|w| ((w[1] - w[0]) / w[0]).ln_1p()).collect())
}

/// Trailing root-sum-of-squares over `w` returns; the first `w - 1` entries
/// use whatever prefix is available.
pub fn realized_vol(returns: &[f64], w: usize) -> Result<Vec<f64>, MarketError> {
    if returns.is_empty() {
        return Err(MarketError::EmptySeries);
    }
    if w < 1 {
        return Err(MarketError::Config("w_sigma must be >= 1".into()));
    }
    // Direct summation per window: a running sum drifts after long replays
    // and the window is small.
    Ok((0..returns.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(w);
            returns[lo..=t].iter().map(|r| r * r).sum::<f64>().sqrt()
        })
        .collect())
}

/// EMA with smoothing `2 / (period + 1)`, seeded by the first value.
pub fn ema(values: &[f64], period: usize) -> Vec<f64> {
    let alpha = 2.0 / (period as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = match values.first() {
        Some(v) => *v,
        None => return out,
    };
    for v in values {
        acc += alpha * (v - acc);
        out.push(acc);
    }
    out
}

pub fn liquidity_proxy(
    volume: &[f64],
    sigma: &[f64],
    cfg: &FeatureConfig,
) -> Result<Vec<f64>, MarketError> {
    if volume.len() != sigma.len() {
        return Err(MarketError::LengthMismatch(volume.len(), sigma.len()));
    }
    if !(cfg.eps > 0.0) {
        return Err(MarketError::Config("eps must be > 0".into()));
    }
    Ok(ema(volume, cfg.ema_period)
        .into_iter()
        .zip(sigma)
        .map(|(v, s)| v / (s + cfg.eps))
        .collect())
}

/// Assigns each funding event to the first bar whose open time is at or
/// after the event. Events past the last bar open have no bar to land on
/// and are dropped.
pub fn align_funding(bar_times: &[i64], events: &[(i64, f64)]) -> Result<Vec<f64>, MarketError> {
    if let Some(i) = (1..bar_times.len()).find(|&i| bar_times[i] <= bar_times[i - 1]) {
        return Err(MarketError::UnsortedBars(i));
    }
    let mut out = vec![0.0; bar_times.len()];
    for &(t, rate) in events {
        let idx = bar_times.partition_point(|&b| b < t);
        if let Some(slot) = out.get_mut(idx) {
            *slot += rate;
        }
    }
    Ok(out)
}

pub fn classify_regime(
    sigma: f64,
    funding: f64,
    lambda: f64,
    sigma_norm: f64,
    cfg: &FeatureConfig,
) -> Regime {
    let ratio = vol_ratio(sigma, sigma_norm, cfg.eps);
    if ratio >= cfg.tau_sigma_2 || funding.abs() >= cfg.tau_f {
        Regime::Extreme
    } else if ratio >= cfg.tau_sigma_1 || lambda <= cfg.tau_lambda {
        Regime::Volatile
    } else {
        Regime::Calm
    }
}

fn vol_ratio(sigma: f64, sigma_norm: f64, eps: f64) -> f64 {
    sigma / sigma_norm.max(eps)
}

/// Rolling median of `values` over the trailing `window` points, floored at
/// `eps`. Short prefixes use what is available.
pub fn rolling_median(values: &[f64], window: usize, eps: f64) -> Vec<f64> {
    let mut buf: Vec<f64> = Vec::with_capacity(window);
    (0..values.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            buf.clear();
            buf.extend_from_slice(&values[lo..=t]);
            buf.sort_by(f64::total_cmp);
            let n = buf.len();
            let m = if n % 2 == 1 {
                buf[n / 2]
            } else {
                0.5 * (buf[n / 2 - 1] + buf[n / 2])
            };
            m.max(eps)
        })
        .collect()
}

/// Per-bar sigma aligned to bars: bar 0 has no return and gets 0.
pub fn bar_sigma(bars: &[ReplayBar], w_sigma: usize) -> Result<Vec<f64>, MarketError> {
    let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let r = log_returns(&closes)?;
    let mut sigma = Vec::with_capacity(bars.len());
    sigma.push(0.0);
    sigma.extend(realized_vol(&r, w_sigma)?);
    Ok(sigma)
}

/// Builds the market state for every bar. Funding is read from the bars,
/// which are expected to carry aligned funding already.
pub fn build_market_states(
    bars: &[ReplayBar],
    cfg: &FeatureConfig,
) -> Result<Vec<MarketState>, MarketError> {
    cfg.validate()?;
    let sigma = bar_sigma(bars, cfg.w_sigma)?;
    let volume: Vec<f64> = bars.iter().map(|b| b.volume).collect();
    let lambda = liquidity_proxy(&volume, &sigma, cfg)?;
    // Bar 0 has no return; leave it out of the normalizer so the warm-up
    // median is not dragged toward zero.
    let mut norm = vec![cfg.eps];
    norm.extend(rolling_median(&sigma[1..], cfg.vol_norm_window, cfg.eps));
    Ok(bars
        .iter()
        .enumerate()
        .map(|(i, b)| MarketState {
            sigma: sigma[i],
            funding: b.funding_rate,
            liquidity: lambda[i],
            regime: classify_regime(sigma[i], b.funding_rate, lambda[i], norm[i], cfg),
            close_price: b.close,
            volume: b.volume,
            vol_ratio: vol_ratio(sigma[i], norm[i], cfg.eps),
        })
        .collect())
}

/// Writes the per-bar feature table as CSV.
pub fn write_feature_table<W: Write>(
    mut w: W,
    bars: &[ReplayBar],
    states: &[MarketState],
) -> std::io::Result<()> {
    writeln!(w, "open_time_ms,close,volume,sigma,vol_ratio,liquidity,funding,regime")?;
    for (b, s) in bars.iter().zip(states) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            b.open_time_ms,
            b.close,
            b.volume,
            s.sigma,
            s.vol_ratio,
            s.liquidity,
            s.funding,
            s.regime.as_str()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn log_returns_oracles() {
        assert_eq!(log_returns(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0, 0.0]);
        let r = log_returns(&[100.0, 100.0 * 0.01f64.exp()]).unwrap();
        assert_relative_eq!(r[0], 0.01, max_relative = 1e-12);
        // 50-digit reference values.
        let r = log_returns(&[100.0, 102.0, 99.0]).unwrap();
        assert_relative_eq!(r[0], 0.01980262729617971302602907, max_relative = 1e-14);
        assert_relative_eq!(r[1], -0.02985296314968115420957792, max_relative = 1e-14);
        assert_eq!(
            log_returns(&[1.0, 0.0]),
            Err(MarketError::NonPositivePrice(1))
        );
    }

    #[test]
    fn realized_vol_oracles() {
        assert_eq!(realized_vol(&[0.0; 4], 2).unwrap(), vec![0.0; 4]);
        let s = realized_vol(&[0.01, -0.02, 0.02], 3).unwrap();
        assert_relative_eq!(s[2], 0.0009f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(s[2], 0.03, max_relative = 1e-14);
        assert_eq!(realized_vol(&[0.05], 1).unwrap(), vec![0.05]);
        assert_eq!(realized_vol(&[], 1), Err(MarketError::EmptySeries));
    }

    #[test]
    fn liquidity_oracles() {
        let cfg = FeatureConfig {
            eps: 1.0,
            ema_period: 2,
            ..Default::default()
        };
        let l = liquidity_proxy(&[7.0; 5], &[0.0; 5], &cfg).unwrap();
        assert!(l.iter().all(|v| (*v - 7.0).abs() < 1e-12));
        let l = liquidity_proxy(&[10.0, 20.0], &[0.0, 0.0], &cfg).unwrap();
        assert_relative_eq!(l[1], 10.0 + (2.0 / 3.0) * 10.0, max_relative = 1e-14);
        let zero = FeatureConfig { eps: 0.0, ..cfg };
        assert!(matches!(
            liquidity_proxy(&[1.0], &[0.0], &zero),
            Err(MarketError::Config(_))
        ));
    }

    #[test]
    fn funding_alignment() {
        assert_eq!(align_funding(&[0, 96, 192], &[]).unwrap(), vec![0.0; 3]);
        assert_eq!(
            align_funding(&[0, 96, 192], &[(100, 0.001)]).unwrap(),
            vec![0.0, 0.0, 0.001]
        );
        assert_eq!(
            align_funding(&[0, 96, 192], &[(96, 0.002), (90, 0.001)]).unwrap(),
            vec![0.0, 0.003, 0.0]
        );
        assert_eq!(
            align_funding(&[0, 5, 5], &[]),
            Err(MarketError::UnsortedBars(2))
        );
    }

    #[test]
    fn regime_examples() {
        let cfg = FeatureConfig::default();
        assert_eq!(classify_regime(0.5, 0.0, 1e6, 1.0, &cfg), Regime::Calm);
        assert_eq!(classify_regime(2.5, 0.0, 1e6, 1.0, &cfg), Regime::Extreme);
        assert_eq!(classify_regime(0.5, 0.012, 1e6, 1.0, &cfg), Regime::Extreme);
        assert_eq!(classify_regime(0.5, -0.012, 1e6, 1.0, &cfg), Regime::Extreme);
        assert_eq!(classify_regime(1.0, 0.0, 1e6, 1.0, &cfg), Regime::Volatile);
        assert_eq!(classify_regime(0.1, 0.0, 0.0, 1.0, &cfg), Regime::Volatile);
    }

    #[test]
    fn config_rejects_bad_thresholds() {
        let c = FeatureConfig {
            tau_sigma_1: 2.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rolling_median_prefix() {
        let m = rolling_median(&[3.0, 1.0, 2.0, 10.0], 3, 1e-9);
        assert_eq!(m, vec![3.0, 2.0, 2.0, 2.0]);
        assert_eq!(rolling_median(&[0.0], 3, 0.5), vec![0.5]);
    }

    proptest! {
        #[test]
        fn vol_scales_linearly(r in proptest::collection::vec(-0.1f64..0.1, 1..50), c in 0.0f64..10.0, w in 1usize..20) {
            let base = realized_vol(&r, w).unwrap();
            let scaled: Vec<f64> = r.iter().map(|x| x * c).collect();
            let s = realized_vol(&scaled, w).unwrap();
            for (a, b) in base.iter().zip(&s) {
                prop_assert!((a * c - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn funding_is_conserved(times in proptest::collection::btree_set(0i64..10_000, 1..40),
                                ev in proptest::collection::vec((0i64..10_000, -0.01f64..0.01), 0..30)) {
            let times: Vec<i64> = times.into_iter().collect();
            let last = *times.last().unwrap();
            let out = align_funding(&times, &ev).unwrap();
            let kept: f64 = ev.iter().filter(|(t, _)| *t <= last).map(|(_, r)| r).sum();
            prop_assert!((out.iter().sum::<f64>() - kept).abs() < 1e-12);
        }

        #[test]
        fn regime_is_monotone_in_ratio(a in 0.0f64..5.0, b in 0.0f64..5.0, f in -0.02f64..0.02, l in -1.0f64..1.0) {
            let cfg = FeatureConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(classify_regime(lo, f, l, 1.0, &cfg) <= classify_regime(hi, f, l, 1.0, &cfg));
        }
    }
}
