//! Orchestration behind the command-line tool: load bars, run replays,
//! write run directories, compare variants and build significance reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bar::{check_contiguous, forward_fill, ReplayBar};
use crate::config::{ConfigError, DataMode, GapPolicy, RunConfig, CODE_VERSION};
use crate::data::binance::{funding_to_csv, klines_to_csv};
use crate::data::{
    merge_funding, synth_generate, BinanceClient, Cache, CacheEntry, DataError, SynthConfig, Transport,
};
use crate::enforcement::Variant;
use crate::metrics::{
    block_bootstrap_ci, simple_returns, two_proportion_test, wilcoxon_signed_rank, BootstrapCi, MetricsReport,
    TwoProportionResult, WilcoxonResult,
};
use crate::policy::{load_policy, Policy};
use crate::sim::{run_replay, CashLedger, MarginTable, ReplayError, ReplayParams, RunResult};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("no feasible candidate: {0}")]
    NoFeasibleCandidate(String),
    #[error("{path}: missing or unreadable metrics ({message})")]
    MissingMetrics { path: String, message: String },
    #[error("io on {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Other(String),
}

impl RunError {
    /// 2 config, 3 data, 4 feasibility, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Data(_) | RunError::Replay(ReplayError::DataGap(_) | ReplayError::BadBars(_)) => 3,
            RunError::Replay(ReplayError::Config(_)) => 2,
            RunError::NoFeasibleCandidate(_) => 4,
            _ => 1,
        }
    }

    pub(crate) fn io(p: &Path, e: impl std::fmt::Display) -> Self {
        RunError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        }
    }
}

pub fn write_file(p: &Path, content: impl AsRef<[u8]>) -> Result<(), RunError> {
    if let Some(d) = p.parent() {
        fs::create_dir_all(d).map_err(|e| RunError::io(d, e))?;
    }
    fs::write(p, content).map_err(|e| RunError::io(p, e))
}

fn read_text(p: &Path) -> Result<String, RunError> {
    fs::read_to_string(p).map_err(|e| RunError::io(p, e))
}

// ----------------------------------------------------------------- data

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBars {
    pub bars: Vec<ReplayBar>,
    pub flags: Vec<String>,
}

/// Synthetic bars covering the configured window, seeded by the run seed.
pub fn synth_bars(cfg: &RunConfig) -> Result<Vec<ReplayBar>, RunError> {
    let (s, e) = cfg.window_ms()?;
    let step = cfg.interval_ms();
    let n = ((e - s) / step) as usize;
    let sc = SynthConfig {
        start_ms: s,
        interval_ms: step,
        ..cfg.synth.clone()
    };
    Ok(synth_generate(cfg.seed, n, &sc))
}

fn funding_events(bars: &[ReplayBar]) -> Vec<(i64, f64)> {
    bars.iter()
        .filter(|b| b.funding_rate != 0.0)
        .map(|b| (b.open_time_ms, b.funding_rate))
        .collect()
}

#[cfg(feature = "net")]
fn default_client() -> Result<BinanceClient<crate::data::binance::ReqwestTransport>, RunError> {
    let t = crate::data::binance::ReqwestTransport::new(crate::data::binance::BASE_URL).map_err(RunError::Other)?;
    Ok(BinanceClient::new(t))
}

#[cfg(not(feature = "net"))]
fn default_client() -> Result<BinanceClient<crate::data::OfflineTransport>, RunError> {
    Ok(BinanceClient::new(crate::data::OfflineTransport))
}

/// Cache-first venue bars with funding merged in. The gap policy decides
/// whether missing bars abort the run or get forward-filled.
pub fn venue_bars_with<T: Transport>(
    cfg: &RunConfig,
    client: &mut BinanceClient<T>,
    cache: &mut Cache,
) -> Result<LoadedBars, RunError> {
    let (s, e) = cfg.window_ms()?;
    let step = cfg.interval_ms();
    client.tolerate_gaps = cfg.gap_policy == GapPolicy::ForwardFill;
    let mut bars = client.fetch_klines(cache, cfg.symbol(), &cfg.interval, s, e)?;
    let funding = client.fetch_funding(cache, cfg.symbol(), s, e)?;
    let mut flags = Vec::new();
    if check_contiguous(&bars, step).is_err() || bars.first().is_some_and(|b| b.open_time_ms != s) {
        match cfg.gap_policy {
            GapPolicy::Fail => return Err(DataError::Gap(format!("{} {} has missing bars", cfg.symbol(), cfg.interval)).into()),
            GapPolicy::ForwardFill => {
                let n = forward_fill(&mut bars, step);
                tracing::warn!(inserted = n, "forward-filled missing bars");
                flags.push(format!("forward_filled_bars={n}"));
            }
        }
    }
    merge_funding(&mut bars, &funding)?;
    Ok(LoadedBars { bars, flags })
}

pub fn load_bars(cfg: &RunConfig) -> Result<LoadedBars, RunError> {
    match cfg.mode {
        DataMode::Synth => Ok(LoadedBars {
            bars: synth_bars(cfg)?,
            flags: vec!["synthetic_data".into()],
        }),
        DataMode::Binance => {
            let mut cache = Cache::open(&cfg.cache_root())?;
            let mut client = default_client()?;
            venue_bars_with(cfg, &mut client, &mut cache)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchSummary {
    pub cache_root: String,
    pub network_calls: usize,
    pub entries: Vec<CacheEntry>,
}

/// Fills the cache for the configured window. Synthetic mode writes the
/// generated bars as a fixture cache that venue mode can then read offline.
pub fn fetch_with<T: Transport>(cfg: &RunConfig, client: &mut BinanceClient<T>) -> Result<FetchSummary, RunError> {
    let root = cfg.cache_root();
    let mut cache = Cache::open(&root)?;
    cache.verify_all()?;
    let (s, e) = cfg.window_ms()?;
    match cfg.mode {
        DataMode::Synth => {
            let bars = synth_bars(cfg)?;
            if cache.lookup("klines", cfg.symbol(), &cfg.interval, s, e).is_none() {
                cache.store("klines", cfg.symbol(), &cfg.interval, s, e, "csv", &klines_to_csv(&bars), bars.len(), 0)?;
            }
            if cache.lookup("funding", cfg.symbol(), "", s, e).is_none() {
                let ev = funding_events(&bars);
                cache.store("funding", cfg.symbol(), "", s, e, "csv", &funding_to_csv(&ev), ev.len(), 0)?;
            }
        }
        DataMode::Binance => {
            for sym in &cfg.symbols {
                client.tolerate_gaps = cfg.gap_policy == GapPolicy::ForwardFill;
                client.fetch_klines(&mut cache, sym, &cfg.interval, s, e)?;
                client.fetch_funding(&mut cache, sym, s, e)?;
                client.fetch_exchange_info(&mut cache, sym)?;
            }
        }
    }
    Ok(FetchSummary {
        cache_root: root.display().to_string(),
        network_calls: client.calls(),
        entries: cache.manifest().entries.clone(),
    })
}

pub fn fetch(cfg: &RunConfig) -> Result<FetchSummary, RunError> {
    let mut client = default_client()?;
    fetch_with(cfg, &mut client)
}

// --------------------------------------------------------------- replay

pub fn resolve_policy(cfg: &RunConfig) -> Result<Policy, RunError> {
    match &cfg.policy_path {
        None => Ok(Policy::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.clone(),
                message: e.to_string(),
            })?;
            load_policy(&text).map_err(|e| ConfigError::Invalid(format!("{p}: {e}")).into())
        }
    }
}

pub fn build_params(cfg: &RunConfig, variant: Variant, policy: &Policy) -> Result<ReplayParams, RunError> {
    let margin = MarginTable::for_symbol(Path::new(&cfg.tiers_dir), cfg.symbol())
        .map_err(|e| ConfigError::Invalid(format!("tiers: {e}")))?;
    let mut sim = cfg.sim.clone();
    sim.symbol = cfg.symbol().to_string();
    sim.venue = cfg.venue.clone();
    Ok(ReplayParams {
        sim,
        strategy: cfg.strategy.clone(),
        attacks: cfg.attacks.clone(),
        features: cfg.features.clone(),
        gate: cfg.gate.clone(),
        policy: policy.clone(),
        spec: cfg.scope.clone(),
        trader_model: cfg.trader.model.clone(),
        trader_params: cfg.trader.params.clone(),
        trust: cfg.trust.clone(),
        margin,
        ..ReplayParams::new(variant, cfg.seed, cfg.interval_ms())
    })
}

/// What `metrics.json` holds: the metrics plus enough context to tell runs
/// apart. Contains nothing time-dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub code_version: String,
    pub variant: Variant,
    pub seed: u64,
    pub symbol: String,
    pub interval: String,
    pub start: String,
    pub end: String,
    pub n_bars: usize,
    pub flags: Vec<String>,
    pub liquidations: usize,
    pub stops: usize,
    pub ledger: CashLedger,
    pub max_cash_residual: f64,
    pub metrics: MetricsReport,
}

pub fn summarize(cfg: &RunConfig, run_id: &str, n_bars: usize, data_flags: &[String], r: &RunResult) -> RunSummary {
    let mut flags = data_flags.to_vec();
    flags.extend(r.flags.iter().cloned());
    RunSummary {
        run_id: run_id.to_string(),
        code_version: CODE_VERSION.to_string(),
        variant: r.variant,
        seed: r.seed,
        symbol: cfg.symbol().to_string(),
        interval: cfg.interval.clone(),
        start: cfg.start.clone(),
        end: cfg.end.clone(),
        n_bars,
        flags,
        liquidations: r.liquidations.len(),
        stops: r.stops.len(),
        ledger: r.ledger.clone(),
        max_cash_residual: r.max_cash_residual,
        metrics: r.metrics.clone(),
    }
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("row serializes"));
        s.push('\n');
    }
    s
}

/// Writes `equity.csv`, `actions.jsonl`, `audit.jsonl`, `metrics.json`
/// and the resolved config into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, summary: &RunSummary, r: &RunResult) -> Result<(), RunError> {
    let mut eq = String::from("time_ms,equity\n");
    for p in &r.equity {
        eq.push_str(&format!("{},{}\n", p.time_ms, p.equity));
    }
    write_file(&dir.join("equity.csv"), eq)?;
    write_file(&dir.join("actions.jsonl"), jsonl(&r.actions))?;
    write_file(&dir.join("audit.jsonl"), jsonl(&r.audit))?;
    let m = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_file(&dir.join("metrics.json"), m + "\n")?;
    write_file(&dir.join("config.yaml"), cfg.to_yaml())
}

/// One replay of `cfg.variant` written to `<output_dir>/<run_id>/`.
pub fn replay_to_dir(cfg: &RunConfig) -> Result<(PathBuf, RunSummary), RunError> {
    let loaded = load_bars(cfg)?;
    let policy = resolve_policy(cfg)?;
    let params = build_params(cfg, cfg.variant, &policy)?;
    let r = run_replay(&params, &loaded.bars)?;
    let run_id = cfg.run_id();
    let summary = summarize(cfg, &run_id, loaded.bars.len(), &loaded.flags, &r);
    let dir = Path::new(&cfg.output_dir).join(&run_id);
    write_run(&dir, cfg, &summary, &r)?;
    Ok((dir, summary))
}

// ---------------------------------------------------------- attack eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub mdd: f64,
    pub cvar_99: f64,
    pub liquidations: u32,
    pub attack_success: Option<f64>,
    pub false_block: Option<f64>,
    pub latency_ms: f64,
    pub dg_rate: Option<f64>,
    pub dg_loss: Option<f64>,
}

impl From<&MetricsReport> for ComparisonRow {
    fn from(m: &MetricsReport) -> Self {
        ComparisonRow {
            variant: m.variant.clone(),
            mdd: m.mdd,
            cvar_99: m.cvar_99,
            liquidations: m.liquidation_count,
            attack_success: m.attack_success,
            false_block: m.false_block,
            latency_ms: m.mean_latency_ms,
            dg_rate: m.dg_rate,
            dg_loss: m.dg_loss,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Plain-text table with the main-results columns.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<15} {:>8} {:>12} {:>5} {:>8} {:>8} {:>10} {:>8} {:>8}\n",
        "variant", "MDD", "CVaR_0.99", "Liq", "AS", "FB", "Lat(ms)", "DG_rate", "DG_loss"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<15} {:>8.4} {:>12.4e} {:>5} {:>8} {:>8} {:>10.5} {:>8} {:>8}\n",
            r.variant,
            r.mdd,
            r.cvar_99,
            r.liquidations,
            opt(r.attack_success),
            opt(r.false_block),
            r.latency_ms,
            opt(r.dg_rate),
            opt(r.dg_loss)
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct AttackEval {
    pub dir: PathBuf,
    pub run_id: String,
    pub rows: Vec<ComparisonRow>,
    pub runs: Vec<(Variant, RunResult)>,
}

/// Runs each variant against the same bars and attack schedule, writing
/// one run directory per variant plus `comparison.txt` / `comparison.json`.
pub fn attack_eval(cfg: &RunConfig, variants: &[Variant]) -> Result<AttackEval, RunError> {
    let loaded = load_bars(cfg)?;
    attack_eval_on(cfg, variants, &loaded)
}

pub fn attack_eval_on(cfg: &RunConfig, variants: &[Variant], loaded: &LoadedBars) -> Result<AttackEval, RunError> {
    let policy = resolve_policy(cfg)?;
    let run_id = cfg.run_id();
    let dir = Path::new(&cfg.output_dir).join(format!("attack_eval_{run_id}"));
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &v in variants {
        let params = build_params(cfg, v, &policy)?;
        let r = run_replay(&params, &loaded.bars)?;
        let summary = summarize(cfg, &run_id, loaded.bars.len(), &loaded.flags, &r);
        let vcfg = RunConfig {
            variant: v,
            ..cfg.clone()
        };
        write_run(&dir.join(v.as_str()), &vcfg, &summary, &r)?;
        rows.push(ComparisonRow::from(&r.metrics));
        runs.push((v, r));
    }
    write_file(&dir.join("comparison.txt"), format!("run_id {run_id}\n{}", render_table(&rows)))?;
    let j = serde_json::to_string_pretty(&rows).expect("rows serialize");
    write_file(&dir.join("comparison.json"), j + "\n")?;
    Ok(AttackEval {
        dir,
        run_id,
        rows,
        runs,
    })
}

// --------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub equity: Vec<f64>,
}

pub fn load_run_dir(dir: &Path) -> Result<LoadedRun, RunError> {
    let missing = |m: String| RunError::MissingMetrics {
        path: dir.display().to_string(),
        message: m,
    };
    let text = read_text(&dir.join("metrics.json")).map_err(|e| missing(e.to_string()))?;
    let summary: RunSummary = serde_json::from_str(&text).map_err(|e| missing(e.to_string()))?;
    let eq_text = read_text(&dir.join("equity.csv")).map_err(|e| missing(e.to_string()))?;
    let mut rd = csv::Reader::from_reader(eq_text.as_bytes());
    let mut equity = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| missing(format!("equity.csv: {e}")))?;
        let v: f64 = row
            .get(1)
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| missing("equity.csv: bad row".into()))?;
        equity.push(v);
    }
    if equity.is_empty() {
        return Err(missing("equity.csv is empty".into()));
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        summary,
        equity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub baseline: String,
    pub candidate: String,
    /// Circular block bootstrap CI of the mean per-step return difference
    /// (candidate minus baseline).
    pub mean_diff_ci: Option<BootstrapCi>,
    pub wilcoxon: Option<WilcoxonResult>,
    pub two_proportion_as: Option<TwoProportionResult>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ComparisonRow>,
    /// Bootstrap CI of each run's mean per-step return, in row order.
    pub mean_return_ci: Vec<Option<BootstrapCi>>,
    pub pairs: Vec<PairStats>,
}

fn label(r: &LoadedRun) -> String {
    format!("{}@{}", r.summary.variant.as_str(), r.summary.run_id)
}

fn attack_count(m: &MetricsReport) -> Option<(u64, u64)> {
    let n = m.n_attack_attempts as u64;
    let a = m.attack_success?;
    (n > 0).then(|| ((a * n as f64).round() as u64, n))
}

/// Main table for every run; for two or more runs, each later run is
/// compared against the first.
pub fn build_report(runs: &[LoadedRun], rc: &crate::config::ReportConfig, seed: u64) -> Report {
    let rows = runs.iter().map(|r| ComparisonRow::from(&r.summary.metrics)).collect();
    let mean_return_ci = runs
        .iter()
        .map(|r| block_bootstrap_ci(&simple_returns(&r.equity), rc.block_len, rc.n_boot, seed, rc.level).ok())
        .collect();
    let mut pairs = Vec::new();
    if let Some((base, rest)) = runs.split_first() {
        let rb = simple_returns(&base.equity);
        for cand in rest {
            let rc_ = simple_returns(&cand.equity);
            let mut notes = Vec::new();
            let (mean_diff_ci, wilcoxon) = if rb.len() == rc_.len() {
                let d: Vec<f64> = rc_.iter().zip(&rb).map(|(c, b)| c - b).collect();
                let ci = block_bootstrap_ci(&d, rc.block_len, rc.n_boot, seed, rc.level)
                    .map_err(|e| notes.push(format!("bootstrap: {e}")))
                    .ok();
                let w = wilcoxon_signed_rank(&rc_, &rb).map_err(|e| notes.push(format!("wilcoxon: {e}"))).ok();
                (ci, w)
            } else {
                notes.push(format!("return series differ in length ({} vs {})", rb.len(), rc_.len()));
                (None, None)
            };
            let tp = match (attack_count(&base.summary.metrics), attack_count(&cand.summary.metrics)) {
                (Some((s1, n1)), Some((s2, n2))) => two_proportion_test(s1, n1, s2, n2).ok(),
                _ => {
                    notes.push("attack success unavailable for one side".into());
                    None
                }
            };
            pairs.push(PairStats {
                baseline: label(base),
                candidate: label(cand),
                mean_diff_ci,
                wilcoxon,
                two_proportion_as: tp,
                notes,
            });
        }
    }
    Report {
        rows,
        mean_return_ci,
        pairs,
    }
}

pub fn render_report(rep: &Report) -> String {
    let mut s = render_table(&rep.rows);
    if rep.pairs.is_empty() {
        return s;
    }
    s.push_str("\nsignificance (candidate vs baseline)\n");
    for p in &rep.pairs {
        s.push_str(&format!("{} vs {}\n", p.candidate, p.baseline));
        match &p.mean_diff_ci {
            Some(ci) => s.push_str(&format!(
                "  block bootstrap CI, mean return diff: [{:.6e}, {:.6e}] (block {})\n",
                ci.lo, ci.hi, ci.block_len
            )),
            None => s.push_str("  block bootstrap CI: n/a\n"),
        }
        match &p.wilcoxon {
            Some(w) => s.push_str(&format!(
                "  Wilcoxon signed-rank: p = {:.4e} (n = {}, {:?}, {} zero diffs dropped)\n",
                w.p_value, w.n, w.method, w.zeros_dropped
            )),
            None => s.push_str("  Wilcoxon signed-rank: n/a\n"),
        }
        match &p.two_proportion_as {
            Some(t) => s.push_str(&format!(
                "  two-proportion z (AttackSuccess): z = {:.4}, p = {:.4e}{}\n",
                t.z,
                t.p_value,
                if t.zero_variance { ", zero variance" } else { "" }
            )),
            None => s.push_str("  two-proportion z (AttackSuccess): n/a\n"),
        }
        for n in &p.notes {
            s.push_str(&format!("  note: {n}\n"));
        }
    }
    s
}

/// Loads run directories, writes `report.txt` and `report.json` to `out`.
pub fn report(dirs: &[PathBuf], out: &Path, rc: &crate::config::ReportConfig, seed: u64) -> Result<Report, RunError> {
    if dirs.is_empty() {
        return Err(RunError::Other("report needs at least one run directory".into()));
    }
    let runs = dirs.iter().map(|d| load_run_dir(d)).collect::<Result<Vec<_>, _>>()?;
    let rep = build_report(&runs, rc, seed);
    write_file(&out.join("report.txt"), render_report(&rep))?;
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&rep).expect("report serializes") + "\n")?;
    Ok(rep)
}
