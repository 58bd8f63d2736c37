//! Public USD-M futures market data: klines, funding history and contract
//! metadata. Unauthenticated GETs only. Every fetch goes through the cache
//! first, so a covered window never touches the network.

use std::cell::RefCell;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bar::{check_contiguous, interval_ms, ReplayBar};
use crate::data::cache::Cache;
use crate::data::DataError;

pub const BASE_URL: &str = "https://fapi.binance.com";
pub const KLINES_PATH: &str = "/fapi/v1/klines";
pub const FUNDING_PATH: &str = "/fapi/v1/fundingRate";
pub const EXCHANGE_INFO_PATH: &str = "/fapi/v1/exchangeInfo";
pub const KLINES_PAGE: usize = 1500;
pub const FUNDING_PAGE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
    pub retry_after_sec: Option<u64>,
}

/// One GET against `base + path` with query pairs.
pub trait Transport {
    fn get(&self, path: &str, query: &[(&str, String)]) -> Result<HttpResponse, String>;
}

#[cfg(feature = "net")]
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
    base: String,
}

#[cfg(feature = "net")]
impl ReqwestTransport {
    pub fn new(base: &str) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(ReqwestTransport {
            client,
            base: base.trim_end_matches('/').to_string(),
        })
    }
}

#[cfg(feature = "net")]
impl Transport for ReqwestTransport {
    fn get(&self, path: &str, query: &[(&str, String)]) -> Result<HttpResponse, String> {
        let resp = self
            .client
            .get(format!("{}{}", self.base, path))
            .query(query)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let retry_after_sec = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|s| s.parse().ok());
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse {
            status,
            body,
            retry_after_sec,
        })
    }
}

/// Stand-in used when the crate is built without network support.
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn get(&self, path: &str, _query: &[(&str, String)]) -> Result<HttpResponse, String> {
        Err(format!("network disabled (built without the `net` feature); {path} is not cached"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32, retry_after_sec: Option<u64>) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        let ms = retry_after_sec.map_or(exp, |s| s * 1000).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || status == 418 || (500..600).contains(&status)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractMeta {
    pub tick_size: f64,
    pub step_size: f64,
}

/// Rounds a quantity down to the venue step.
pub fn round_to_step(qty: f64, step: f64) -> f64 {
    if step <= 0.0 {
        return qty;
    }
    let n = (qty / step + 1e-9).floor();
    let decimals = (-step.log10()).ceil().max(0.0) as i32;
    let scale = 10f64.powi(decimals);
    (n * step * scale).round() / scale
}

pub struct BinanceClient<T: Transport> {
    transport: T,
    pub retry: RetryPolicy,
    /// Accept and cache kline windows with missing bars instead of failing.
    pub tolerate_gaps: bool,
    sleep: Box<dyn Fn(Duration)>,
    calls: RefCell<usize>,
}

impl<T: Transport> BinanceClient<T> {
    pub fn new(transport: T) -> Self {
        BinanceClient {
            transport,
            retry: RetryPolicy::default(),
            tolerate_gaps: false,
            sleep: Box::new(std::thread::sleep),
            calls: RefCell::new(0),
        }
    }

    /// Replaces the sleeper; tests pass a no-op.
    pub fn with_sleep(mut self, f: impl Fn(Duration) + 'static) -> Self {
        self.sleep = Box::new(f);
        self
    }

    /// Network requests issued so far, retries included.
    pub fn calls(&self) -> usize {
        *self.calls.borrow()
    }

    fn get_json(&self, path: &str, query: &[(&str, String)]) -> Result<Value, DataError> {
        let mut attempt = 0;
        loop {
            *self.calls.borrow_mut() += 1;
            let resp = self.transport.get(path, query).map_err(DataError::Transport)?;
            if resp.status == 200 {
                return serde_json::from_str(&resp.body).map_err(|e| DataError::Parse(format!("{path}: {e}")));
            }
            if retryable(resp.status) && attempt < self.retry.max_retries {
                tracing::warn!(status = resp.status, attempt, "retrying {path}");
                (self.sleep)(self.retry.delay(attempt, resp.retry_after_sec));
                attempt += 1;
                continue;
            }
            return Err(DataError::Http {
                status: resp.status,
                attempts: attempt + 1,
                body: resp.body.chars().take(200).collect(),
            });
        }
    }

    /// Bars with `start_ms <= open_time < end_ms`, cache-first.
    pub fn fetch_klines(
        &self,
        cache: &mut Cache,
        symbol: &str,
        interval: &str,
        start_ms: i64,
        end_ms: i64,
    ) -> Result<Vec<ReplayBar>, DataError> {
        let step = interval_ms(interval).ok_or_else(|| DataError::Parse(format!("bad interval {interval}")))?;
        if let Some(e) = cache.lookup("klines", symbol, interval, start_ms, end_ms).cloned() {
            let bars = parse_klines_csv(&cache.read(&e)?)?;
            return Ok(bars
                .into_iter()
                .filter(|b| b.open_time_ms >= start_ms && b.open_time_ms < end_ms)
                .collect());
        }
        let mut bars: Vec<ReplayBar> = Vec::new();
        let mut cursor = start_ms;
        while cursor < end_ms {
            let page = self.get_json(
                KLINES_PATH,
                &[
                    ("symbol", symbol.to_string()),
                    ("interval", interval.to_string()),
                    ("startTime", cursor.to_string()),
                    ("endTime", (end_ms - 1).to_string()),
                    ("limit", KLINES_PAGE.to_string()),
                ],
            )?;
            let rows = page.as_array().ok_or_else(|| DataError::Parse("klines: expected array".into()))?;
            if rows.is_empty() {
                break;
            }
            for row in rows {
                let b = parse_kline_row(row)?;
                if b.open_time_ms >= end_ms {
                    break;
                }
                if bars.last().is_none_or(|l| b.open_time_ms > l.open_time_ms) {
                    bars.push(b);
                }
            }
            let last = bars.last().map_or(cursor, |b| b.open_time_ms);
            if last + step <= cursor {
                break;
            }
            cursor = last + step;
            if rows.len() < KLINES_PAGE {
                break;
            }
        }
        let expected = ((end_ms - start_ms) / step) as usize;
        if !self.tolerate_gaps {
            check_contiguous(&bars, step).map_err(|e| DataError::Gap(e.to_string()))?;
            if bars.len() != expected || bars.first().is_some_and(|b| b.open_time_ms != start_ms) {
                return Err(DataError::Gap(format!("expected {expected} bars from {start_ms}, got {}", bars.len())));
            }
        }
        cache.store(
            "klines",
            symbol,
            interval,
            start_ms,
            end_ms,
            "csv",
            &klines_to_csv(&bars),
            bars.len(),
            now_ms(),
        )?;
        Ok(bars)
    }

    /// Funding events in `[start_ms, end_ms)`, ascending, cache-first.
    pub fn fetch_funding(
        &self,
        cache: &mut Cache,
        symbol: &str,
        start_ms: i64,
        end_ms: i64,
    ) -> Result<Vec<(i64, f64)>, DataError> {
        if let Some(e) = cache.lookup("funding", symbol, "", start_ms, end_ms).cloned() {
            let ev = parse_funding_csv(&cache.read(&e)?)?;
            return Ok(ev.into_iter().filter(|(t, _)| *t >= start_ms && *t < end_ms).collect());
        }
        let mut out: Vec<(i64, f64)> = Vec::new();
        let mut cursor = start_ms;
        while cursor < end_ms {
            let page = self.get_json(
                FUNDING_PATH,
                &[
                    ("symbol", symbol.to_string()),
                    ("startTime", cursor.to_string()),
                    ("endTime", (end_ms - 1).to_string()),
                    ("limit", FUNDING_PAGE.to_string()),
                ],
            )?;
            let rows = page.as_array().ok_or_else(|| DataError::Parse("funding: expected array".into()))?;
            for r in rows {
                let t = r["fundingTime"].as_i64().ok_or_else(|| DataError::Parse("fundingTime".into()))?;
                let rate = num(&r["fundingRate"])?;
                if t >= start_ms && t < end_ms && out.last().is_none_or(|l| t > l.0) {
                    out.push((t, rate));
                }
            }
            match out.last() {
                Some(&(t, _)) if rows.len() == FUNDING_PAGE && t + 1 > cursor => cursor = t + 1,
                _ => break,
            }
        }
        cache.store(
            "funding",
            symbol,
            "",
            start_ms,
            end_ms,
            "csv",
            &funding_to_csv(&out),
            out.len(),
            now_ms(),
        )?;
        Ok(out)
    }

    pub fn fetch_exchange_info(&self, cache: &mut Cache, symbol: &str) -> Result<ContractMeta, DataError> {
        if let Some(e) = cache.lookup("exchange_info", symbol, "", 0, 0).cloned() {
            return serde_json::from_str(&cache.read(&e)?).map_err(|e| DataError::Parse(e.to_string()));
        }
        let v = self.get_json(EXCHANGE_INFO_PATH, &[])?;
        let sym = v["symbols"]
            .as_array()
            .and_then(|a| a.iter().find(|s| s["symbol"] == symbol))
            .ok_or_else(|| DataError::UnknownSymbol(symbol.to_string()))?;
        let filter = |kind: &str, key: &str| -> Result<f64, DataError> {
            sym["filters"]
                .as_array()
                .and_then(|fs| fs.iter().find(|f| f["filterType"] == kind))
                .ok_or_else(|| DataError::Parse(format!("{symbol}: no {kind}")))
                .and_then(|f| num(&f[key]))
        };
        let meta = ContractMeta {
            tick_size: filter("PRICE_FILTER", "tickSize")?,
            step_size: filter("LOT_SIZE", "stepSize")?,
        };
        let text = serde_json::to_string(&meta).expect("meta serializes");
        cache.store("exchange_info", symbol, "", 0, 0, "json", &text, 1, now_ms())?;
        Ok(meta)
    }
}

fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

fn num(v: &Value) -> Result<f64, DataError> {
    match v {
        Value::String(s) => s.parse().map_err(|_| DataError::Parse(format!("not a number: {s}"))),
        Value::Number(n) => n.as_f64().ok_or_else(|| DataError::Parse("number".into())),
        _ => Err(DataError::Parse(format!("expected number, got {v}"))),
    }
}

fn parse_kline_row(row: &Value) -> Result<ReplayBar, DataError> {
    let a = row.as_array().filter(|a| a.len() >= 6).ok_or_else(|| DataError::Parse("kline row".into()))?;
    Ok(ReplayBar {
        open_time_ms: a[0].as_i64().ok_or_else(|| DataError::Parse("open time".into()))?,
        open: num(&a[1])?,
        high: num(&a[2])?,
        low: num(&a[3])?,
        close: num(&a[4])?,
        volume: num(&a[5])?,
        funding_rate: 0.0,
    })
}

#[derive(Serialize, Deserialize)]
struct KlineRow {
    open_time_ms: i64,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

pub fn klines_to_csv(bars: &[ReplayBar]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for b in bars {
        w.serialize(KlineRow {
            open_time_ms: b.open_time_ms,
            open: b.open,
            high: b.high,
            low: b.low,
            close: b.close,
            volume: b.volume,
        })
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn parse_klines_csv(text: &str) -> Result<Vec<ReplayBar>, DataError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<KlineRow>()
        .map(|r| {
            r.map(|k| ReplayBar {
                open_time_ms: k.open_time_ms,
                open: k.open,
                high: k.high,
                low: k.low,
                close: k.close,
                volume: k.volume,
                funding_rate: 0.0,
            })
            .map_err(|e| DataError::Parse(e.to_string()))
        })
        .collect()
}

pub fn funding_to_csv(ev: &[(i64, f64)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time_ms", "rate"]).expect("in-memory write");
    for (t, r) in ev {
        w.write_record([t.to_string(), r.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn parse_funding_csv(text: &str) -> Result<Vec<(i64, f64)>, DataError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<(i64, f64)>()
        .map(|r| r.map_err(|e| DataError::Parse(e.to_string())))
        .collect()
}
