//! Market data: the public-endpoint client, the checksummed cache and the
//! synthetic generator, plus a guard that records which bar windows a
//! consumer has read.

pub mod binance;
pub mod cache;
pub mod synth;

use std::cell::RefCell;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

use crate::bar::ReplayBar;

pub use binance::{round_to_step, BinanceClient, ContractMeta, OfflineTransport, RetryPolicy, Transport};
pub use cache::{Cache, CacheEntry, Manifest};
pub use synth::{synth_generate, Segment, SynthConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("http {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, attempts: u32, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("gap in bars: {0}")]
    Gap(String),
    #[error("checksum mismatch for {path}: manifest {expected}, file {actual}")]
    ChecksumMismatch {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("unknown symbol {0}")]
    UnknownSymbol(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("io on {path}: {message}")]
    Io { path: String, message: String },
    #[error("bad window: {0}")]
    Window(String),
}

impl DataError {
    pub(crate) fn io(p: &Path, e: std::io::Error) -> Self {
        DataError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// `YYYY-MM-DD` at 00:00 UTC, in epoch ms.
pub fn parse_date_ms(s: &str) -> Result<i64, DataError> {
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| DataError::Window(format!("{s}: {e}")))?;
    Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_millis())
}

/// Puts each funding event on the first bar opening at or after it. Events
/// past the last bar open are dropped.
pub fn merge_funding(bars: &mut [ReplayBar], events: &[(i64, f64)]) -> Result<(), DataError> {
    let times: Vec<i64> = bars.iter().map(|b| b.open_time_ms).collect();
    let aligned =
        crate::market_state::align_funding(&times, events).map_err(|e| DataError::Parse(e.to_string()))?;
    for (b, f) in bars.iter_mut().zip(aligned) {
        b.funding_rate = f;
    }
    Ok(())
}

/// Hands out bar windows and logs every `[start, end)` it served.
#[derive(Debug)]
pub struct GuardedBars {
    bars: Vec<ReplayBar>,
    touched: RefCell<Vec<(i64, i64)>>,
}

impl GuardedBars {
    pub fn new(bars: Vec<ReplayBar>) -> Self {
        GuardedBars {
            bars,
            touched: RefCell::new(Vec::new()),
        }
    }

    /// Bars with `start_ms <= open_time < end_ms`.
    pub fn window(&self, start_ms: i64, end_ms: i64) -> Vec<ReplayBar> {
        self.touched.borrow_mut().push((start_ms, end_ms));
        self.bars
            .iter()
            .filter(|b| b.open_time_ms >= start_ms && b.open_time_ms < end_ms)
            .cloned()
            .collect()
    }

    pub fn touched(&self) -> Vec<(i64, i64)> {
        self.touched.borrow().clone()
    }

    pub fn clear_log(&self) {
        self.touched.borrow_mut().clear();
    }

    pub fn span(&self) -> Option<(i64, i64)> {
        Some((self.bars.first()?.open_time_ms, self.bars.last()?.open_time_ms + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dates_and_calendar_counts() {
        let a = parse_date_ms("2025-09-01").unwrap();
        assert_eq!(a, 1_756_684_800_000);
        let b = parse_date_ms("2025-12-01").unwrap();
        // 91 days of 15m bars.
        assert_eq!((b - a) / 900_000, 91 * 96);
        assert!(parse_date_ms("2025-13-01").is_err());
    }

    #[test]
    fn funding_merge_conserves_total() {
        let mut bars: Vec<ReplayBar> = (0..10)
            .map(|i| ReplayBar {
                open_time_ms: i * 100,
                open: 1.0,
                high: 1.0,
                low: 1.0,
                close: 1.0,
                volume: 1.0,
                funding_rate: 0.0,
            })
            .collect();
        let ev = [(0, 0.1), (150, 0.2), (199, 0.3), (900, 0.4)];
        merge_funding(&mut bars, &ev).unwrap();
        let total: f64 = bars.iter().map(|b| b.funding_rate).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((bars[2].funding_rate - 0.5).abs() < 1e-15);
    }

    #[test]
    fn guard_logs_windows() {
        let g = GuardedBars::new(Vec::new());
        g.window(0, 10);
        g.window(5, 20);
        assert_eq!(g.touched(), vec![(0, 10), (5, 20)]);
    }
}
