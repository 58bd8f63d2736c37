//! Replay bars: the master time index for features, gating and fills.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One OHLCV bar with the funding rate aligned to it (0 when no funding
/// event falls on this bar).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayBar {
    pub open_time_ms: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    #[serde(default)]
    pub funding_rate: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum BarError {
    #[error("bar {index}: OHLC envelope violated (low <= min(open, close) <= max(open, close) <= high)")]
    Envelope { index: usize },
    #[error("bar {index}: non-positive price")]
    NonPositivePrice { index: usize },
    #[error("bar {index}: open time {time} not after previous {prev}")]
    NotIncreasing { index: usize, prev: i64, time: i64 },
    #[error("bar {index}: expected open time {expected}, found {found}")]
    Gap {
        index: usize,
        expected: i64,
        found: i64,
    },
}

impl ReplayBar {
    pub fn validate(&self, index: usize) -> Result<(), BarError> {
        if self.open <= 0.0 || self.close <= 0.0 || self.low <= 0.0 || self.high <= 0.0 {
            return Err(BarError::NonPositivePrice { index });
        }
        let lo = self.open.min(self.close);
        let hi = self.open.max(self.close);
        if !(self.low <= lo && hi <= self.high) {
            return Err(BarError::Envelope { index });
        }
        Ok(())
    }
}

/// Checks envelopes and strictly increasing open times.
pub fn validate_series(bars: &[ReplayBar]) -> Result<(), BarError> {
    for (i, bar) in bars.iter().enumerate() {
        bar.validate(i)?;
        if i > 0 && bar.open_time_ms <= bars[i - 1].open_time_ms {
            return Err(BarError::NotIncreasing {
                index: i,
                prev: bars[i - 1].open_time_ms,
                time: bar.open_time_ms,
            });
        }
    }
    Ok(())
}

/// Checks that bars are contiguous at `interval_ms`. Any missing bar is a gap.
pub fn check_contiguous(bars: &[ReplayBar], interval_ms: i64) -> Result<(), BarError> {
    for i in 1..bars.len() {
        let expected = bars[i - 1].open_time_ms + interval_ms;
        if bars[i].open_time_ms != expected {
            return Err(BarError::Gap {
                index: i,
                expected,
                found: bars[i].open_time_ms,
            });
        }
    }
    Ok(())
}

/// Fills missing bars with flat copies of the previous close. Returns the
/// number of inserted bars.
pub fn forward_fill(bars: &mut Vec<ReplayBar>, interval_ms: i64) -> usize {
    if bars.len() < 2 {
        return 0;
    }
    let mut out = Vec::with_capacity(bars.len());
    let mut inserted = 0;
    out.push(bars[0]);
    for bar in bars.iter().skip(1) {
        let mut prev = *out.last().expect("nonempty");
        while prev.open_time_ms + interval_ms < bar.open_time_ms {
            let c = prev.close;
            prev = ReplayBar {
                open_time_ms: prev.open_time_ms + interval_ms,
                open: c,
                high: c,
                low: c,
                close: c,
                volume: 0.0,
                funding_rate: 0.0,
            };
            out.push(prev);
            inserted += 1;
        }
        out.push(*bar);
    }
    *bars = out;
    inserted
}

/// Parses interval strings like `15m`, `1h`, `4h`, `1d` into milliseconds.
pub fn interval_ms(interval: &str) -> Option<i64> {
    let (num, unit) = interval.split_at(interval.len().checked_sub(1)?);
    let n: i64 = num.parse().ok()?;
    if n <= 0 {
        return None;
    }
    let unit_ms = match unit {
        "m" => 60_000,
        "h" => 3_600_000,
        "d" => 86_400_000,
        "w" => 7 * 86_400_000,
        _ => return None,
    };
    Some(n * unit_ms)
}
