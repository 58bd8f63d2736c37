//! Trader-state escalation score: behavioral features, a fixed-coefficient
//! logistic base model and an isotonic calibration map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::AccountState;

/// One completed trade as seen by the feature extractor. `pnl` is zero for
/// fills that realize nothing; those neither extend nor break a loss streak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub timestamp_ms: i64,
    pub requested_leverage: f64,
    pub pnl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraderFeatures {
    pub drawdown: f64,
    pub margin_ratio: f64,
    pub orders_in_window: f64,
    pub loss_streak: f64,
    pub leverage_after_loss: f64,
    pub recent_pnl_sum: f64,
}

pub const N_FEATURES: usize = 6;

impl TraderFeatures {
    pub fn to_vec(&self) -> [f64; N_FEATURES] {
        [
            self.drawdown,
            self.margin_ratio,
            self.orders_in_window,
            self.loss_streak,
            self.leverage_after_loss,
            self.recent_pnl_sum,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub window_n: usize,
    pub w_rate_sec: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            window_n: 200,
            w_rate_sec: 60.0,
        }
    }
}

/// Features over the last `window_n` trades. `now_ms` anchors the pacing
/// window `(now - W_rate, now]`.
pub fn extract_features(
    trades: &[TradeRecord],
    account: &AccountState,
    now_ms: i64,
    p: &FeatureParams,
) -> TraderFeatures {
    let w = &trades[trades.len().saturating_sub(p.window_n)..];
    let w_ms = (p.w_rate_sec * 1000.0) as i64;
    let orders_in_window = w
        .iter()
        .filter(|t| t.timestamp_ms > now_ms - w_ms && t.timestamp_ms <= now_ms)
        .count();
    let loss_streak = w
        .iter()
        .rev()
        .filter(|t| t.pnl != 0.0)
        .take_while(|t| t.pnl < 0.0)
        .count();

    let mean_lev = if w.is_empty() {
        0.0
    } else {
        w.iter().map(|t| t.requested_leverage).sum::<f64>() / w.len() as f64
    };
    let after: Vec<f64> = w
        .windows(2)
        .filter(|p| p[0].pnl < 0.0)
        .map(|p| p[1].requested_leverage)
        .collect();
    let leverage_after_loss = if after.is_empty() || mean_lev <= 0.0 {
        0.0
    } else {
        after.iter().sum::<f64>() / after.len() as f64 / mean_lev
    };

    TraderFeatures {
        drawdown: account.drawdown,
        margin_ratio: account.margin_ratio,
        orders_in_window: orders_in_window as f64,
        loss_streak: loss_streak as f64,
        leverage_after_loss,
        recent_pnl_sum: w.iter().map(|t| t.pnl).sum(),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraderError {
    #[error("model has {got} coefficients, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("calibration needs at least one pair")]
    EmptyInput,
}

/// Nondecreasing step map. Each knot `(x, y)` maps `[x, next_x)` to `y`;
/// inputs left of the first knot take the first value. No knots means
/// identity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationMap {
    pub knots: Vec<(f64, f64)>,
}

impl CalibrationMap {
    pub fn identity() -> Self {
        CalibrationMap { knots: Vec::new() }
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.knots.is_empty() {
            return x.clamp(0.0, 1.0);
        }
        let idx = self.knots.partition_point(|k| k.0 <= x);
        self.knots[idx.saturating_sub(1)].1
    }

    pub fn is_monotone(&self) -> bool {
        self.knots
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
    }
}

/// Isotonic regression by pool-adjacent-violators. Equal scores are pooled
/// first so the fit is a function of the score; pooling then proceeds left
/// to right.
pub fn fit_calibration(pairs: &[(f64, bool)]) -> Result<CalibrationMap, TraderError> {
    if pairs.is_empty() {
        return Err(TraderError::EmptyInput);
    }
    let mut sorted: Vec<(f64, f64)> = pairs
        .iter()
        .map(|(s, y)| (*s, if *y { 1.0 } else { 0.0 }))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // (left score, weighted sum, weight)
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for (s, y) in sorted {
        match blocks.last_mut() {
            Some(b) if b.0 == s => {
                b.1 += y;
                b.2 += 1.0;
            }
            _ => blocks.push((s, y, 1.0)),
        }
    }
    let mut pooled: Vec<(f64, f64, f64)> = Vec::with_capacity(blocks.len());
    for b in blocks {
        pooled.push(b);
        while pooled.len() >= 2 {
            let n = pooled.len();
            let (l, r) = (pooled[n - 2], pooled[n - 1]);
            if l.1 / l.2 > r.1 / r.2 {
                pooled.pop();
                let last = pooled.last_mut().expect("nonempty");
                last.1 += r.1;
                last.2 += r.2;
            } else {
                break;
            }
        }
    }
    Ok(CalibrationMap {
        knots: pooled.into_iter().map(|(x, s, w)| (x, s / w)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibratedModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    #[serde(default)]
    pub calibration: CalibrationMap,
}

impl Default for CalibratedModel {
    /// Escalation rises with drawdown, pacing, loss streaks and leverage
    /// after losses; comfortable margin lowers it.
    fn default() -> Self {
        CalibratedModel {
            coefficients: vec![8.0, -0.5, 0.3, 0.05, 0.8, 0.0],
            intercept: -3.0,
            calibration: CalibrationMap::identity(),
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn predict_raw(f: &TraderFeatures, m: &CalibratedModel) -> Result<f64, TraderError> {
    if m.coefficients.len() != N_FEATURES {
        return Err(TraderError::DimensionMismatch {
            expected: N_FEATURES,
            got: m.coefficients.len(),
        });
    }
    let z = m.intercept
        + f.to_vec()
            .iter()
            .zip(&m.coefficients)
            .map(|(x, c)| x * c)
            .sum::<f64>();
    Ok(logistic(z))
}

pub fn risk_score(f: &TraderFeatures, m: &CalibratedModel) -> Result<f64, TraderError> {
    Ok(m.calibration.apply(predict_raw(f, m)?).clamp(0.0, 1.0))
}
