//! `sae`: fetch market data, replay gate variants, run the attack harness,
//! tune parameters and compare runs.
//!
//! Exit codes: 0 ok, 1 other failure, 2 bad config, 3 data problem,
//! 4 no feasible candidate.

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sae_core::autoopt::{run_optimize, walk_forward};
use sae_core::config::{ConfigError, DataMode, RunConfig};
use sae_core::data::GuardedBars;
use sae_core::runner::{self, render_report, render_table, RunError};
use sae_core::Variant;

#[derive(Parser, Debug)]
#[command(name = "sae", version, about = "Survivability-aware execution: replay, attack evaluation and tuning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Populate the data cache (synthetic mode writes a fixture cache).
    Fetch(Common),
    /// Replay one gate variant and write a run directory.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Replay several variants against the same attack schedule.
    AttackEval {
        #[command(flatten)]
        common: Common,
        /// Variants to compare; all five when omitted.
        #[arg(long, value_enum, value_delimiter = ',')]
        variants: Vec<VariantArg>,
    },
    /// Batched constrained random search over strategy and gate parameters.
    Optimize(OptimizeArgs),
    /// Main table and significance summary for one or more run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where report.txt and report.json go.
        #[arg(long, default_value = "outputs/report")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// YAML run config; missing keys take the shipped defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated symbols; the first one is replayed.
    #[arg(long, value_delimiter = ',')]
    symbols: Vec<String>,
    #[arg(long)]
    interval: Option<String>,
    /// First day, `YYYY-MM-DD`.
    #[arg(long)]
    start: Option<String>,
    /// Day after the last, `YYYY-MM-DD`.
    #[arg(long)]
    end: Option<String>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    tiers_dir: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    /// Forward-fill missing bars instead of failing.
    #[arg(long)]
    forward_fill: bool,
}

#[derive(Args, Debug, Clone)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "batch_trials")]
    batch_trials: Option<usize>,
    #[arg(long = "max_batches")]
    max_batches: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long = "falseblock_max")]
    falseblock_max: Option<f64>,
    #[arg(long = "attacksucc_max")]
    attacksucc_max: Option<f64>,
    #[arg(long = "latency_max_ms")]
    latency_max_ms: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Tune before this date and evaluate once from it onward.
    #[arg(long = "test_start")]
    test_start: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Binance,
    Synth,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum VariantArg {
    #[value(name = "NoSAE", alias = "nosae")]
    NoSae,
    #[value(name = "StaticOMS", alias = "staticoms")]
    StaticOms,
    #[value(name = "Budget", alias = "budget")]
    Budget,
    #[value(name = "BudgetCooldown", alias = "budget+cooldown")]
    BudgetCooldown,
    #[value(name = "Full", alias = "full")]
    Full,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::NoSae => Variant::NoSae,
            VariantArg::StaticOms => Variant::StaticOms,
            VariantArg::Budget => Variant::Budget,
            VariantArg::BudgetCooldown => Variant::BudgetCooldown,
            VariantArg::Full => Variant::Full,
        }
    }
}

fn base_config(path: Option<&Path>) -> Result<RunConfig, RunError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// Flags override the file, which overrides the defaults.
fn resolve(c: &Common) -> Result<RunConfig, RunError> {
    let mut cfg = base_config(c.config.as_deref())?;
    if let Some(m) = c.mode {
        cfg.mode = match m {
            ModeArg::Binance => DataMode::Binance,
            ModeArg::Synth => DataMode::Synth,
        };
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if !c.symbols.is_empty() {
        cfg.symbols = c.symbols.clone();
    }
    if let Some(i) = &c.interval {
        cfg.interval = i.clone();
    }
    if let Some(s) = &c.start {
        cfg.start = s.clone();
    }
    if let Some(e) = &c.end {
        cfg.end = e.clone();
    }
    if let Some(p) = &c.policy {
        cfg.policy_path = Some(p.clone());
    }
    if let Some(t) = &c.tiers_dir {
        cfg.tiers_dir = t.clone();
    }
    if let Some(o) = &c.output_dir {
        cfg.output_dir = o.clone();
        cfg.optimize.output_dir = Path::new(o).join("auto").display().to_string();
    }
    if c.forward_fill {
        cfg.gap_policy = sae_core::config::GapPolicy::ForwardFill;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_fetch(c: &Common) -> Result<(), RunError> {
    let cfg = resolve(c)?;
    let f = runner::fetch(&cfg)?;
    println!("cache {} ({} network calls)", f.cache_root, f.network_calls);
    for e in &f.entries {
        println!("{}  {}  rows={}", e.sha256, e.path, e.rows);
    }
    Ok(())
}

fn cmd_replay(c: &Common, v: Option<VariantArg>) -> Result<(), RunError> {
    let mut cfg = resolve(c)?;
    if let Some(v) = v {
        cfg.variant = v.into();
    }
    let (dir, s) = runner::replay_to_dir(&cfg)?;
    println!("run_id {}  ->  {}", s.run_id, dir.display());
    if !s.flags.is_empty() {
        println!("flags: {}", s.flags.join(", "));
    }
    print!("{}", render_table(&[runner::ComparisonRow::from(&s.metrics)]));
    Ok(())
}

fn cmd_attack_eval(c: &Common, vs: &[VariantArg]) -> Result<(), RunError> {
    let cfg = resolve(c)?;
    let variants: Vec<Variant> = if vs.is_empty() {
        Variant::ALL.to_vec()
    } else {
        vs.iter().map(|&v| v.into()).collect()
    };
    let ev = runner::attack_eval(&cfg, &variants)?;
    println!("run_id {}  ->  {}", ev.run_id, ev.dir.display());
    print!("{}", render_table(&ev.rows));
    Ok(())
}

fn cmd_optimize(a: &OptimizeArgs) -> Result<(), RunError> {
    let mut cfg = resolve(&a.common)?;
    let o = &mut cfg.optimize;
    if let Some(x) = a.batch_trials {
        o.batch_trials = x;
    }
    if let Some(x) = a.max_batches {
        o.max_batches = x;
    }
    if let Some(x) = a.patience {
        o.patience = x;
    }
    if let Some(x) = a.falseblock_max {
        o.falseblock_max = x;
    }
    if let Some(x) = a.attacksucc_max {
        o.attacksucc_max = x;
    }
    if a.latency_max_ms.is_some() {
        o.latency_max_ms = a.latency_max_ms;
    }
    if let Some(x) = a.workers {
        o.workers = x;
    }
    if let Some(t) = &a.test_start {
        o.test_start = Some(t.clone());
    }
    if o.patience > o.max_batches {
        tracing::warn!(
            patience = o.patience,
            max_batches = o.max_batches,
            "patience exceeds max_batches; early stopping can never trigger"
        );
    }
    cfg.validate()?;
    if cfg.optimize.test_start.is_some() {
        let bars = runner::load_bars(&cfg)?.bars;
        let guard = GuardedBars::new(bars);
        let rep = walk_forward(&cfg, &guard, a.resume)?;
        println!(
            "run_id {}  validation J {:.6}  test reads during optimization: {}",
            rep.run_id, rep.score_validation, rep.test_reads_during_optimization
        );
        let mut rows = vec![
            runner::ComparisonRow::from(&rep.validation),
            runner::ComparisonRow::from(&rep.test),
        ];
        rows[0].variant.push_str("/val");
        rows[1].variant.push_str("/test");
        print!("{}", render_table(&rows));
    } else {
        let res = run_optimize(&cfg, a.resume)?;
        println!(
            "best J {:.6} at trial {} (batch {}), {} trials in {} batches{}  ->  {}",
            res.incumbent.score,
            res.incumbent.trial,
            res.incumbent.batch,
            res.checkpoint.next_trial,
            res.checkpoint.batches_done,
            if res.checkpoint.stopped_early { ", stopped early" } else { "" },
            res.out_dir.join("best.json").display()
        );
    }
    Ok(())
}

fn cmd_report(runs: &[PathBuf], out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<(), RunError> {
    let cfg = base_config(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let rep = runner::report(runs, out, &cfg.report, seed)?;
    print!("{}", render_report(&rep));
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Fetch(c) => cmd_fetch(c),
        Cmd::Replay { common, variant } => cmd_replay(common, *variant),
        Cmd::AttackEval { common, variants } => cmd_attack_eval(common, variants),
        Cmd::Optimize(a) => cmd_optimize(a),
        Cmd::Report { runs, out, config, seed } => cmd_report(runs, out, config.as_deref(), *seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let RunError::Config(ConfigError::Parse(_)) = e {
                eprintln!("hint: unknown or misspelled keys are rejected; see configs/default.yaml");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
