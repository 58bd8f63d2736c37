//! Constrained random search over strategy and gate parameters. Each batch
//! samples candidates, replays them on the validation bars and keeps the
//! feasible candidate with the lowest score. Search stops after `patience`
//! batches without improvement. A checkpoint after every batch makes runs
//! resumable, and walk-forward selection freezes the winner before the test
//! segment is read.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bar::ReplayBar;
use crate::config::{OptimizeConfig, RunConfig};
use crate::data::GuardedBars;
use crate::metrics::MetricsReport;
use crate::policy::Policy;
use crate::runner::{
    build_params, load_bars, render_table, resolve_policy, summarize, write_file, write_run, ComparisonRow, RunError,
};
use crate::sim::{run_replay, StrategyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn ok(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Strategy parameters (lookback, threshold, sizing) and gate parameters
/// (default budget, regime cooldowns, rule thresholds, tightening floors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub lookback: Vec<usize>,
    pub threshold: Range,
    pub strategy_leverage: Range,
    pub strategy_notional: Range,
    pub leverage_cap: Range,
    pub notional_cap: Range,
    pub order_rate_cap: Range,
    pub slippage_cap_bps: Range,
    pub volatile_cooldown_sec: Range,
    pub extreme_cooldown_sec: Range,
    pub tau_limit: Range,
    pub tau_block: Range,
    pub h_min: Range,
    pub q_min: Range,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lookback: vec![8, 16, 32, 64],
            threshold: Range::new(0.0005, 0.01),
            strategy_leverage: Range::new(1.0, 5.0),
            strategy_notional: Range::new(0.1, 1.0),
            leverage_cap: Range::new(1.0, 5.0),
            notional_cap: Range::new(0.1, 1.0),
            order_rate_cap: Range::new(1.0, 8.0),
            slippage_cap_bps: Range::new(20.0, 200.0),
            volatile_cooldown_sec: Range::new(0.0, 300.0),
            extreme_cooldown_sec: Range::new(0.0, 600.0),
            tau_limit: Range::new(0.3, 0.6),
            tau_block: Range::new(0.65, 0.95),
            h_min: Range::new(0.1, 0.5),
            q_min: Range::new(0.1, 0.5),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), String> {
        if self.lookback.is_empty() || self.lookback.contains(&0) {
            return Err("lookback choices must be nonempty and positive".into());
        }
        let ranges = [
            ("threshold", self.threshold),
            ("strategy_leverage", self.strategy_leverage),
            ("strategy_notional", self.strategy_notional),
            ("leverage_cap", self.leverage_cap),
            ("notional_cap", self.notional_cap),
            ("order_rate_cap", self.order_rate_cap),
            ("slippage_cap_bps", self.slippage_cap_bps),
            ("volatile_cooldown_sec", self.volatile_cooldown_sec),
            ("extreme_cooldown_sec", self.extreme_cooldown_sec),
            ("tau_limit", self.tau_limit),
            ("tau_block", self.tau_block),
            ("h_min", self.h_min),
            ("q_min", self.q_min),
        ];
        if let Some((n, _)) = ranges.iter().find(|(_, r)| !r.ok()) {
            return Err(format!("range {n} is empty or unordered"));
        }
        if ranges.iter().any(|(_, r)| r.lo < 0.0) {
            return Err("ranges must be nonnegative".into());
        }
        if !(self.tau_limit.hi < self.tau_block.lo && self.tau_block.hi <= 1.0) {
            return Err("tau_limit range must sit below tau_block range, within [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lookback: usize,
    pub threshold: f64,
    pub strategy_leverage: f64,
    pub strategy_notional: f64,
    pub leverage_cap: f64,
    pub notional_cap: f64,
    pub order_rate_cap: f64,
    pub slippage_cap_bps: f64,
    pub volatile_cooldown_sec: f64,
    pub extreme_cooldown_sec: f64,
    pub tau_limit: f64,
    pub tau_block: f64,
    pub h_min: f64,
    pub q_min: f64,
}

impl Candidate {
    pub fn apply(&self, policy: &Policy, strategy: &StrategyConfig) -> (Policy, StrategyConfig) {
        let mut p = policy.clone();
        p.defaults.leverage_cap = self.leverage_cap;
        p.defaults.notional_cap = self.notional_cap;
        p.defaults.order_rate_cap = self.order_rate_cap;
        p.defaults.slippage_cap_bps = self.slippage_cap_bps;
        p.g_table.volatile.cooldown_sec = self.volatile_cooldown_sec;
        p.g_table.extreme.cooldown_sec = self.extreme_cooldown_sec;
        p.thresholds.tau_limit = self.tau_limit;
        p.thresholds.tau_block = self.tau_block;
        p.h_params.h_min = self.h_min;
        p.q_params.q_min = self.q_min;
        let s = StrategyConfig {
            lookback: self.lookback,
            threshold: self.threshold,
            leverage: self.strategy_leverage,
            notional: self.strategy_notional,
            ..strategy.clone()
        };
        (p, s)
    }
}

/// Uniform draw from each range; trial `index` reads its own ChaCha stream
/// so candidates do not depend on evaluation order.
pub fn sample_candidate(space: &SearchSpace, seed: u64, index: u64) -> Candidate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    Candidate {
        lookback: space.lookback[rng.gen_range(0..space.lookback.len())],
        threshold: space.threshold.sample(&mut rng),
        strategy_leverage: space.strategy_leverage.sample(&mut rng),
        strategy_notional: space.strategy_notional.sample(&mut rng),
        leverage_cap: space.leverage_cap.sample(&mut rng),
        notional_cap: space.notional_cap.sample(&mut rng),
        order_rate_cap: space.order_rate_cap.sample(&mut rng),
        slippage_cap_bps: space.slippage_cap_bps.sample(&mut rng),
        volatile_cooldown_sec: space.volatile_cooldown_sec.sample(&mut rng),
        extreme_cooldown_sec: space.extreme_cooldown_sec.sample(&mut rng),
        tau_limit: space.tau_limit.sample(&mut rng),
        tau_block: space.tau_block.sample(&mut rng),
        h_min: space.h_min.sample(&mut rng),
        q_min: space.q_min.sample(&mut rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub attacksucc_max: f64,
    pub falseblock_max: f64,
    pub latency_max_ms: Option<f64>,
    pub max_liquidations: u32,
}

impl From<&OptimizeConfig> for Constraints {
    fn from(o: &OptimizeConfig) -> Self {
        Constraints {
            attacksucc_max: o.attacksucc_max,
            falseblock_max: o.falseblock_max,
            latency_max_ms: o.latency_max_ms,
            max_liquidations: o.max_liquidations,
        }
    }
}

/// Inclusive thresholds. A rate that could not be measured (no attacks, or
/// no legitimate in-scope actions) counts as zero.
pub fn feasible(m: &MetricsReport, c: &Constraints) -> bool {
    m.attack_success.unwrap_or(0.0) <= c.attacksucc_max
        && m.false_block.unwrap_or(0.0) <= c.falseblock_max
        && c.latency_max_ms.is_none_or(|t| m.mean_latency_ms <= t)
        && m.liquidation_count <= c.max_liquidations
}

/// `w1*MDD + w2*|CVaR_0.99| + w3*DG_loss + w4*latency`.
pub fn score(m: &MetricsReport, w: &[f64; 4]) -> f64 {
    w[0] * m.mdd + w[1] * m.cvar_99.abs() + w[2] * m.dg_loss.unwrap_or(0.0) + w[3] * m.mean_latency_ms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: u64,
    pub batch: usize,
    pub candidate: Candidate,
    pub score: f64,
    pub feasible: bool,
    pub metrics: MetricsReport,
    /// This trial became the incumbent.
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub params: Candidate,
    pub score: f64,
    pub metrics: MetricsReport,
    pub trial: u64,
    pub batch: usize,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub config_hash: String,
    pub next_trial: u64,
    pub batches_done: usize,
    pub stale_batches: usize,
    pub stopped_early: bool,
    pub incumbent: Option<Incumbent>,
    pub best_infeasible: Option<Trial>,
}

/// `best.json`: the incumbent plus run identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub run_id: String,
    pub seed: u64,
    pub score: f64,
    pub trial: u64,
    pub batch: usize,
    pub trials_evaluated: u64,
    pub batches_done: usize,
    pub stopped_early: bool,
    pub params: Candidate,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub incumbent: Incumbent,
    pub checkpoint: Checkpoint,
    pub trace: Vec<Trial>,
    pub out_dir: PathBuf,
}

const CHECKPOINT: &str = "checkpoint.json";
const TRACE: &str = "trace.jsonl";

/// Hash of everything that shapes the search except the batch budget, so a
/// resumed run may extend `max_batches`.
fn config_hash(cfg: &RunConfig, space: &SearchSpace) -> String {
    let mut c = cfg.clone();
    c.optimize.max_batches = 0;
    c.output_dir.clear();
    c.cache_dir.clear();
    c.optimize.output_dir.clear();
    let mut h = Sha256::new();
    h.update(c.to_yaml().as_bytes());
    h.update(serde_yaml::to_string(space).expect("space serializes").as_bytes());
    hex::encode(h.finalize())
}

fn read_checkpoint(p: &Path) -> Result<Checkpoint, RunError> {
    let t = fs::read_to_string(p).map_err(|e| RunError::io(p, e))?;
    serde_json::from_str(&t).map_err(|e| RunError::Other(format!("{}: {e}", p.display())))
}

fn append(p: &Path, lines: &str) -> Result<(), RunError> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(p)
        .map_err(|e| RunError::io(p, e))?;
    f.write_all(lines.as_bytes()).map_err(|e| RunError::io(p, e))
}

/// Scores one candidate on `bars`.
pub fn evaluate(cfg: &RunConfig, policy: &Policy, c: &Candidate, bars: &[ReplayBar]) -> Result<MetricsReport, RunError> {
    let (p, s) = c.apply(policy, &cfg.strategy);
    let mut params = build_params(cfg, cfg.variant, &p)?;
    params.strategy = s;
    Ok(run_replay(&params, bars)?.metrics)
}

/// Batched best-so-far search on `bars`, persisting trace, checkpoint and
/// `best.json` under `out`. With `resume`, state is restored from the
/// checkpoint and the search continues up to `max_batches` in total.
pub fn optimize(
    cfg: &RunConfig,
    space: &SearchSpace,
    bars: &[ReplayBar],
    out: &Path,
    resume: bool,
) -> Result<OptimizeOutcome, RunError> {
    space.validate().map_err(|e| RunError::Config(crate::config::ConfigError::Invalid(e)))?;
    let o = &cfg.optimize;
    let cons = Constraints::from(o);
    let policy = resolve_policy(cfg)?;
    let hash = config_hash(cfg, space);
    let ck_path = out.join(CHECKPOINT);
    let trace_path = out.join(TRACE);
    fs::create_dir_all(out).map_err(|e| RunError::io(out, e))?;

    let mut ck = if resume && ck_path.exists() {
        let ck = read_checkpoint(&ck_path)?;
        if ck.seed != cfg.seed || ck.config_hash != hash {
            return Err(RunError::Config(crate::config::ConfigError::Invalid(
                "checkpoint was written for a different config or seed".into(),
            )));
        }
        ck
    } else {
        write_file(&trace_path, "")?;
        Checkpoint {
            seed: cfg.seed,
            config_hash: hash,
            next_trial: 0,
            batches_done: 0,
            stale_batches: 0,
            stopped_early: false,
            incumbent: None,
            best_infeasible: None,
        }
    };
    let mut trace: Vec<Trial> = Vec::new();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(o.workers.max(1))
        .build()
        .map_err(|e| RunError::Other(e.to_string()))?;

    while !ck.stopped_early && ck.batches_done < o.max_batches {
        let batch = ck.batches_done;
        let first = ck.next_trial;
        let idx: Vec<u64> = (first..first + o.batch_trials as u64).collect();
        let evals: Vec<Result<(Candidate, MetricsReport), RunError>> = pool.install(|| {
            idx.par_iter()
                .map(|&t| {
                    let c = sample_candidate(space, cfg.seed, t);
                    evaluate(cfg, &policy, &c, bars).map(|m| (c, m))
                })
                .collect()
        });
        let mut improved_any = false;
        let mut lines = String::new();
        // Merge in trial order so the incumbent sequence is schedule-free.
        for (t, ev) in idx.iter().zip(evals) {
            let (c, m) = ev?;
            let j = score(&m, &o.weights);
            let ok = feasible(&m, &cons) && j.is_finite();
            let better = ok && ck.incumbent.as_ref().is_none_or(|inc| j < inc.score);
            let trial = Trial {
                trial: *t,
                batch,
                candidate: c.clone(),
                score: j,
                feasible: ok,
                metrics: m.clone(),
                improved: better,
            };
            if better {
                improved_any = true;
                ck.incumbent = Some(Incumbent {
                    params: c,
                    score: j,
                    metrics: m,
                    trial: *t,
                    batch,
                    checkpoint: ck_path.display().to_string(),
                });
            } else if !ok && ck.best_infeasible.as_ref().is_none_or(|b| j < b.score) {
                ck.best_infeasible = Some(trial.clone());
            }
            lines.push_str(&serde_json::to_string(&trial).expect("trial serializes"));
            lines.push('\n');
            trace.push(trial);
        }
        append(&trace_path, &lines)?;
        ck.next_trial = first + o.batch_trials as u64;
        ck.batches_done += 1;
        ck.stale_batches = if improved_any { 0 } else { ck.stale_batches + 1 };
        if ck.stale_batches >= o.patience {
            ck.stopped_early = true;
        }
        tracing::info!(
            batch,
            best = ck.incumbent.as_ref().map(|i| i.score),
            stale = ck.stale_batches,
            "batch done"
        );
        write_file(&ck_path, serde_json::to_string_pretty(&ck).expect("checkpoint serializes") + "\n")?;
    }

    let Some(inc) = ck.incumbent.clone() else {
        if let Some(b) = &ck.best_infeasible {
            let j = serde_json::to_string_pretty(b).expect("trial serializes");
            write_file(&out.join("best_infeasible.json"), j + "\n")?;
        }
        return Err(RunError::NoFeasibleCandidate(format!(
            "{} trials, none met AS <= {}, FB <= {}, liquidations <= {}{}",
            ck.next_trial,
            cons.attacksucc_max,
            cons.falseblock_max,
            cons.max_liquidations,
            cons.latency_max_ms.map_or(String::new(), |t| format!(", latency <= {t} ms"))
        )));
    };
    let best = BestRecord {
        run_id: cfg.run_id(),
        seed: cfg.seed,
        score: inc.score,
        trial: inc.trial,
        batch: inc.batch,
        trials_evaluated: ck.next_trial,
        batches_done: ck.batches_done,
        stopped_early: ck.stopped_early,
        params: inc.params.clone(),
        metrics: inc.metrics.clone(),
    };
    write_file(&out.join("best.json"), serde_json::to_string_pretty(&best).expect("best serializes") + "\n")?;
    let (p, s) = inc.params.apply(&policy, &cfg.strategy);
    let full = BestFullParams {
        config: RunConfig {
            strategy: s,
            ..cfg.clone()
        },
        policy: p,
    };
    write_file(&out.join("best_full_params.yaml"), serde_yaml::to_string(&full).expect("params serialize"))?;
    Ok(OptimizeOutcome {
        incumbent: inc,
        checkpoint: ck,
        trace,
        out_dir: out.to_path_buf(),
    })
}

/// Everything needed to rerun the incumbent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestFullParams {
    pub config: RunConfig,
    pub policy: Policy,
}

/// Replays the incumbent on `bars` into `out/final/<run_id>/`.
pub fn write_final(cfg: &RunConfig, inc: &Incumbent, bars: &[ReplayBar], out: &Path, tag: &str) -> Result<PathBuf, RunError> {
    let policy = resolve_policy(cfg)?;
    let (p, s) = inc.params.apply(&policy, &cfg.strategy);
    let mut params = build_params(cfg, cfg.variant, &p)?;
    params.strategy = s;
    let r = run_replay(&params, bars)?;
    let run_id = cfg.run_id();
    let dir = out.join("final").join(&run_id).join(tag);
    let summary = summarize(cfg, &run_id, bars.len(), &[], &r);
    write_run(&dir, cfg, &summary, &r)?;
    write_file(&dir.join("table.txt"), render_table(&[ComparisonRow::from(&r.metrics)]))?;
    Ok(dir)
}

/// Optimizes over the configured window and writes the final artifacts.
pub fn run_optimize(cfg: &RunConfig, resume: bool) -> Result<OptimizeOutcome, RunError> {
    let bars = load_bars(cfg)?.bars;
    let out = PathBuf::from(&cfg.optimize.output_dir);
    let res = optimize(cfg, &cfg.optimize.space, &bars, &out, resume)?;
    write_final(cfg, &res.incumbent, &bars, &out, "validation")?;
    Ok(res)
}

// ---------------------------------------------------------- walk-forward

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub validation: (i64, i64),
    pub test: (i64, i64),
}

impl Split {
    /// Half-open windows; the validation window must end at or before the
    /// test window starts.
    pub fn new(validation: (i64, i64), test: (i64, i64)) -> Result<Self, RunError> {
        let bad = |m: String| Err(RunError::Config(crate::config::ConfigError::Invalid(m)));
        if validation.0 >= validation.1 || test.0 >= test.1 {
            return bad("split windows must be nonempty".into());
        }
        if validation.1 > test.0 {
            return bad(format!(
                "split overlap: validation ends at {} but test starts at {}",
                validation.1, test.0
            ));
        }
        Ok(Split { validation, test })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self, RunError> {
        let (s, e) = cfg.window_ms()?;
        let t = cfg.optimize.test_start.as_deref().ok_or_else(|| {
            RunError::Config(crate::config::ConfigError::Invalid("walk-forward needs optimize.test_start".into()))
        })?;
        let t = crate::data::parse_date_ms(t)?;
        Split::new((s, t), (t, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardReport {
    pub run_id: String,
    pub split: Split,
    pub params: Candidate,
    pub score_validation: f64,
    pub validation: MetricsReport,
    pub test: MetricsReport,
    /// Windows read while optimizing.
    pub touched_during_optimization: Vec<(i64, i64)>,
    pub test_reads_during_optimization: usize,
}

/// Optimizes on the validation window, then evaluates the frozen incumbent
/// once on the test window. The data guard proves optimization never read a
/// test bar.
pub fn walk_forward(cfg: &RunConfig, guard: &GuardedBars, resume: bool) -> Result<WalkForwardReport, RunError> {
    let split = Split::from_config(cfg)?;
    let out = PathBuf::from(&cfg.optimize.output_dir);
    guard.clear_log();
    let val_bars = guard.window(split.validation.0, split.validation.1);
    let res = optimize(cfg, &cfg.optimize.space, &val_bars, &out, resume)?;
    let touched = guard.touched();
    let test_reads = touched
        .iter()
        .filter(|(s, e)| *s < split.test.1 && split.test.0 < *e)
        .count();
    if test_reads > 0 {
        return Err(RunError::Other(format!("optimization read {test_reads} test window(s)")));
    }
    let policy = resolve_policy(cfg)?;
    let test_bars = guard.window(split.test.0, split.test.1);
    let test = evaluate(cfg, &policy, &res.incumbent.params, &test_bars)?;
    write_final(cfg, &res.incumbent, &val_bars, &out, "validation")?;
    write_final(cfg, &res.incumbent, &test_bars, &out, "test")?;
    let rep = WalkForwardReport {
        run_id: cfg.run_id(),
        split,
        params: res.incumbent.params.clone(),
        score_validation: res.incumbent.score,
        validation: res.incumbent.metrics.clone(),
        test,
        touched_during_optimization: touched,
        test_reads_during_optimization: test_reads,
    };
    let dir = out.join("final").join(cfg.run_id());
    let mut rows = vec![ComparisonRow::from(&rep.validation), ComparisonRow::from(&rep.test)];
    rows[0].variant = format!("{}/validation", rows[0].variant);
    rows[1].variant = format!("{}/test", rows[1].variant);
    write_file(&dir.join("walk_forward.txt"), render_table(&rows))?;
    write_file(&dir.join("walk_forward.json"), serde_json::to_string_pretty(&rep).expect("report serializes") + "\n")?;
    Ok(rep)
}
