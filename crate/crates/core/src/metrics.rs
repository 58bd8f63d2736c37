//! Risk metrics and the significance tests used to compare runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::contract::AuditRecord;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty series")]
    EmptySeries,
    #[error("equity must start positive and never go negative (index {0})")]
    NonPositiveEquity(usize),
    #[error("alpha must lie in (0, 1)")]
    BadAlpha,
    #[error("paired series differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} nonzero differences, got {got}")]
    TooFewPairs { need: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Largest peak-to-trough decline as a fraction of the running peak.
/// Equity may hit zero after a positive start (a wiped-out account).
pub fn max_drawdown(equity: &[f64]) -> Result<f64, StatsError> {
    let first = *equity.first().ok_or(StatsError::EmptySeries)?;
    if !(first > 0.0) {
        return Err(StatsError::NonPositiveEquity(0));
    }
    let mut peak = first;
    let mut mdd: f64 = 0.0;
    for (i, &e) in equity.iter().enumerate() {
        if !(e >= 0.0) {
            return Err(StatsError::NonPositiveEquity(i));
        }
        peak = peak.max(e);
        mdd = mdd.max(1.0 - e / peak);
    }
    Ok(mdd)
}

/// Simple per-step returns `E_t / E_{t-1} - 1`; a step out of zero equity
/// has return 0.
pub fn simple_returns(equity: &[f64]) -> Vec<f64> {
    equity
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] - 1.0 } else { 0.0 })
        .collect()
}

/// Lower-tail size `ceil((1 - alpha) n)`, at least 1. Products that land
/// within 1e-9 of an integer are treated as that integer so that e.g.
/// alpha = 0.99, n = 100 gives 1 and not 2.
pub fn tail_size(alpha: f64, n: usize) -> usize {
    let x = (1.0 - alpha) * n as f64;
    let k = if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, n.max(1))
}

/// Mean of the worst `tail_size(alpha, n)` returns, signed.
pub fn cvar(returns: &[f64], alpha: f64) -> Result<f64, StatsError> {
    if returns.is_empty() {
        return Err(StatsError::EmptySeries);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha);
    }
    let mut s = returns.to_vec();
    s.sort_by(f64::total_cmp);
    let k = tail_size(alpha, s.len());
    Ok(s[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub block_len: usize,
    /// Block length was larger than the series and got clamped.
    pub clamped: bool,
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicate `b` draws from `ChaCha8Rng::seed_from_u64(seed + b)`, so the
/// result does not depend on how replicates are scheduled.
pub fn replicate_rng(seed: u64, b: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64))
}

/// Circular moving-block bootstrap percentile interval for the mean.
pub fn block_bootstrap_ci(
    returns: &[f64],
    block_len: usize,
    n_boot: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapCi, StatsError> {
    let n = returns.len();
    if n == 0 {
        return Err(StatsError::EmptySeries);
    }
    if block_len < 1 {
        return Err(StatsError::InvalidParam("block_len must be >= 1".into()));
    }
    if n_boot < 100 {
        return Err(StatsError::InvalidParam("n_boot must be >= 100".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidParam("level must lie in (0, 1)".into()));
    }
    let l = block_len.min(n);
    let blocks = n.div_ceil(l);
    let mut means: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b);
            let mut sum = 0.0;
            let mut taken = 0;
            for _ in 0..blocks {
                let start = rng.gen_range(0..n);
                for j in 0..l {
                    if taken == n {
                        break;
                    }
                    sum += returns[(start + j) % n];
                    taken += 1;
                }
            }
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        lo: percentile_sorted(&means, tail),
        hi: percentile_sorted(&means, 1.0 - tail),
        block_len: l,
        clamped: l < block_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p_value: f64,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub n: usize,
    pub zeros_dropped: usize,
    pub method: WilcoxonMethod,
}

pub const WILCOXON_EXACT_MAX_N: usize = 12;

/// Average ranks of |d|, doubled so ties stay integral.
pub fn doubled_midranks(abs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged, times two.
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p for nonzero differences `d`, by counting subset sums
/// of the doubled ranks.
pub fn wilcoxon_exact_p(d: &[f64]) -> (f64, f64) {
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let r2 = doubled_midranks(&abs);
    let total: u64 = r2.iter().sum();
    let w2: u64 = d.iter().zip(&r2).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in &r2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(d.len() as i32);
    let le: f64 = counts[..=w2 as usize].iter().sum();
    let ge: f64 = counts[w2 as usize..].iter().sum();
    ((2.0 * le.min(ge) / all).min(1.0), w2 as f64 / 2.0)
}

fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Paired Wilcoxon signed-rank test on `a - b`. Zero differences are
/// dropped; exact for up to 12 remaining pairs, normal with tie and
/// continuity correction beyond.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|x| *x != 0.0).collect();
    let zeros = a.len() - d.len();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            p_value: 1.0,
            w_plus: 0.0,
            n: 0,
            zeros_dropped: zeros,
            method: WilcoxonMethod::Degenerate,
        });
    }
    if n < 5 {
        return Err(StatsError::TooFewPairs { need: 5, got: n });
    }
    if n <= WILCOXON_EXACT_MAX_N {
        let (p, w) = wilcoxon_exact_p(&d);
        return Ok(WilcoxonResult {
            p_value: p,
            w_plus: w,
            n,
            zeros_dropped: zeros,
            method: WilcoxonMethod::Exact,
        });
    }
    let (p, w) = wilcoxon_normal_p(&d);
    Ok(WilcoxonResult {
        p_value: p,
        w_plus: w,
        n,
        zeros_dropped: zeros,
        method: WilcoxonMethod::Normal,
    })
}

/// Normal approximation with tie and continuity correction.
pub fn wilcoxon_normal_p(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let r2 = doubled_midranks(&abs);
    let w: f64 = d
        .iter()
        .zip(&r2)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| *r as f64 / 2.0)
        .sum();
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mean = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return (1.0, w);
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    (normal_two_sided(z).min(1.0), w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoProportionResult {
    pub z: f64,
    pub p_value: f64,
    /// Pooled proportion is 0 or 1: no variance to test against.
    pub zero_variance: bool,
    /// Some expected count is below 5, so the normal tail is rough.
    pub small_sample: bool,
}

/// Pooled two-proportion z-test, two-sided.
pub fn two_proportion_test(s1: u64, n1: u64, s2: u64, n2: u64) -> Result<TwoProportionResult, StatsError> {
    if n1 == 0 || n2 == 0 || s1 > n1 || s2 > n2 {
        return Err(StatsError::InvalidParam("need n >= 1 and 0 <= s <= n".into()));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let p1 = s1 as f64 / n1f;
    let p2 = s2 as f64 / n2f;
    let pooled = (s1 + s2) as f64 / (n1f + n2f);
    let small = [n1f * pooled, n1f * (1.0 - pooled), n2f * pooled, n2f * (1.0 - pooled)]
        .iter()
        .any(|e| *e < 5.0);
    if pooled == 0.0 || pooled == 1.0 {
        return Ok(TwoProportionResult {
            z: 0.0,
            p_value: 1.0,
            zero_variance: true,
            small_sample: small,
        });
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    let z = (p1 - p2) / se;
    Ok(TwoProportionResult {
        z,
        p_value: normal_two_sided(z),
        zero_variance: false,
        small_sample: small,
    })
}

/// Mean recorded decision latency in ms; `None` for an empty log.
pub fn latency_overhead(records: &[AuditRecord]) -> Option<f64> {
    if records.is_empty() {
        None
    } else {
        Some(records.iter().map(|r| r.latency_ms).sum::<f64>() / records.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub mdd: f64,
    pub cvar_95: f64,
    pub cvar_99: f64,
    pub liquidation_count: u32,
    pub attack_success: Option<f64>,
    pub false_block: Option<f64>,
    pub mean_latency_ms: f64,
    pub dg_rate: Option<f64>,
    pub dg_loss: Option<f64>,
    pub n_requests: usize,
    pub n_attack_attempts: usize,
    pub final_equity: f64,
    pub total_return: f64,
}
