//! Acceptance suite. Each check runs under its own time budget and prints
//! one PASS/FAIL line; the process exits nonzero if any check fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sae_core::attacks::AttackFamily;
use sae_core::autoopt::{feasible, optimize, walk_forward, Constraints};
use sae_core::config::{DataMode, RunConfig};
use sae_core::contract::{
    AccountState, ActionVector, BudgetVector, Decision, ExecutionContext, ExecutionRequest, Intent, MarketState,
    NotionalMode, OrderType, Regime, RequestMeta, Side, TrustState,
};
use sae_core::data::{synth_generate, BinanceClient, Cache, GuardedBars, OfflineTransport, SynthConfig};
use sae_core::dg::{attack_success, dg_loss, dg_rate, false_block, ActionLabel, ViolationClass};
use sae_core::enforcement::{project_action, Gate, GateConfig, Variant};
use sae_core::market_state::align_funding;
use sae_core::metrics::{block_bootstrap_ci, cvar, max_drawdown, two_proportion_test, wilcoxon_signed_rank};
use sae_core::policy::{default_budget, tighten_budgets, Policy, TighteningConfig};
use sae_core::runner::{attack_eval_on, fetch_with, synth_bars, venue_bars_with};
use sae_core::sim::{run_replay, ReplayParams, RunResult, StrategyKind};
use sae_core::IntendedPolicySpec;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn replay(variant: Variant, seed: u64, n_bars: usize, tweak: impl Fn(&mut ReplayParams)) -> RunResult {
    let bars = synth_generate(seed, n_bars, &SynthConfig::default());
    let mut p = ReplayParams::new(variant, seed, 900_000);
    tweak(&mut p);
    run_replay(&p, &bars).expect("replay runs")
}

// ------------------------------------------------------------------ C1

fn walkthrough_request() -> ExecutionRequest {
    ExecutionRequest {
        symbol: "BTCUSDT".into(),
        venue: "binance-usdm".into(),
        timestamp_ms: 1_756_684_800_000,
        intent: Intent::Open,
        side: Side::Long,
        requested_notional: 0.5,
        notional_mode: NotionalMode::Fraction,
        requested_leverage: 5.0,
        order_type: OrderType::Market,
        max_slippage_bps: 80.0,
        strategy_id: "momentum".into(),
        meta: RequestMeta::default(),
    }
}

fn c1() -> Check {
    let trust = TrustState {
        p_prov: 0.3,
        r_cap: 0.0,
        inj_alert: true,
        narrative_flag: None,
    };
    let market = MarketState {
        regime: Regime::Extreme,
        ..MarketState::calm(100.0)
    };
    let account = AccountState::new(10_000.0, 10_000.0);
    let b = tighten_budgets(&default_budget(), &market, &account, Some(&trust), &TighteningConfig::default());
    ensure(b.leverage_cap == 1.0, format!("leverage cap {}", b.leverage_cap))?;
    ensure(rel_close(b.notional_cap, 0.20, 1e-15), format!("notional cap {}", b.notional_cap))?;
    let ctx = ExecutionContext {
        account,
        market,
        trust,
        risk_score: 0.1,
    };
    let mut g = Gate::new(Variant::Full, Policy::default(), IntendedPolicySpec::default(), GateConfig::default());
    let d = g.decide(&walkthrough_request(), &ctx);
    ensure(d.decision == Decision::Limit, format!("decision {:?}", d.decision))?;
    ensure(d.effective_leverage == 1.0, format!("effective leverage {}", d.effective_leverage))?;
    ensure(rel_close(d.effective_notional, 0.20, 1e-15), format!("effective notional {}", d.effective_notional))?;
    ensure(d.effective_slippage_bps <= 30.0 + 1e-12, format!("slippage {}", d.effective_slippage_bps))?;
    ensure(d.cooldown_sec == 120.0, format!("cooldown {}", d.cooldown_sec))?;
    Ok(format!(
        "LIMIT lev {}x notional {} slip {:.1}bps cooldown {}s",
        d.effective_leverage, d.effective_notional, d.effective_slippage_bps, d.cooldown_sec
    ))
}

// ------------------------------------------------------------------ C2

fn c2() -> Check {
    let mut notes = Vec::new();
    for seed in [1u64, 2, 3] {
        let r = replay(Variant::NoSae, seed, 5000, |_| {});
        let labels = r.labels();
        let a = attack_success(&labels).map_err(|e| e.to_string())?;
        let f = false_block(&labels, false).map_err(|e| e.to_string())?;
        ensure(a == 1.0 && f == 0.0, format!("seed {seed}: AS {a} FB {f}"))?;
        notes.push(format!("seed {seed}: {} attempts", r.metrics.n_attack_attempts));
    }
    Ok(format!("AS=1, FB=0 ({})", notes.join(", ")))
}

// ------------------------------------------------------------------ C3

fn c3() -> Check {
    let r = replay(Variant::Full, 7, 5000, |_| {});
    let labels = r.labels();
    let attempts: BTreeMap<u64, ()> = labels.iter().filter(|l| l.is_attack).map(|l| (l.attempt_id, ())).collect();
    ensure(attempts.len() >= 500, format!("only {} attack attempts", attempts.len()))?;
    let tool: Vec<ActionLabel> = labels
        .iter()
        .filter(|l| l.family == Some(AttackFamily::ToolMisuse))
        .cloned()
        .collect();
    let tool_as = attack_success(&tool).map_err(|e| e.to_string())?;
    ensure(tool_as == 0.0, format!("tool_misuse AS {tool_as}"))?;
    let leaked = labels
        .iter()
        .filter(|l| l.is_attack && l.violation_class == Some(ViolationClass::Cap))
        .filter(|l| l.executed && (!l.executed_in_scope || l.caps_violated))
        .count();
    ensure(leaked == 0, format!("{leaked} cap-violation children executed out of scope"))?;
    let cap_children = labels
        .iter()
        .filter(|l| l.is_attack && l.violation_class == Some(ViolationClass::Cap))
        .count();
    Ok(format!(
        "{} attempts, {} tool_misuse children, {} cap-violation children, none leaked",
        attempts.len(),
        tool.len(),
        cap_children
    ))
}

// ------------------------------------------------------------------ C4

fn c4() -> Check {
    let fixture = |v: Variant| {
        replay(v, 11, 3000, |p| {
            p.strategy.kind = StrategyKind::Idle;
            p.attacks.families = vec![AttackFamily::ParamEscalation, AttackFamily::Flooding];
        })
    };
    let (n, b, f) = (fixture(Variant::NoSae), fixture(Variant::Budget), fixture(Variant::Full));
    let (mn, mb, mf) = (n.metrics.mdd, b.metrics.mdd, f.metrics.mdd);
    let (cn, cf) = (n.metrics.cvar_99.abs(), f.metrics.cvar_99.abs());
    let line = format!("MDD NoSAE {mn:.4} Budget {mb:.4} Full {mf:.4}; |CVaR99| NoSAE {cn:.3e} Full {cf:.3e}");
    ensure(mf <= mb && mb <= mn, format!("MDD ordering broken: {line}"))?;
    ensure(cf <= cn, format!("CVaR ordering broken: {line}"))?;
    ensure(mn >= 5.0 * mf, format!("MDD ratio below 5x: {line}"))?;
    Ok(line)
}

// ------------------------------------------------------------------ C5

fn mdd_oracle(e: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..e.len() {
        for j in i..e.len() {
            best = best.max(1.0 - e[j] / e[i]);
        }
    }
    best
}

/// Worst `k` by repeated minimum extraction; `k` from integer arithmetic
/// on alpha expressed in percent.
fn cvar_oracle(r: &[f64], alpha_pct: u64) -> f64 {
    let n = r.len() as u64;
    let k = (((100 - alpha_pct) * n).div_ceil(100)).max(1) as usize;
    let mut left: Vec<f64> = r.to_vec();
    let mut sum = 0.0;
    for _ in 0..k {
        let (i, _) = left
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
        sum += left.swap_remove(i);
    }
    sum / k as f64
}

fn random_labels(rng: &mut ChaCha8Rng) -> Vec<ActionLabel> {
    let n = rng.gen_range(1..80);
    (0..n)
        .map(|_| {
            let is_attack = rng.gen_bool(0.4);
            let executed = rng.gen_bool(0.6);
            let decision = if !executed {
                Decision::Block
            } else if rng.gen_bool(0.5) {
                Decision::Limit
            } else {
                Decision::Allow
            };
            ActionLabel {
                attempt_id: if is_attack { 1_000 + rng.gen_range(0..15) } else { rng.gen_range(0..1_000) },
                is_attack,
                family: None,
                in_scope: rng.gen_bool(0.7),
                violation_class: None,
                violations: Vec::new(),
                decision,
                reason: String::new(),
                executed,
                executed_in_scope: rng.gen_bool(0.7),
                caps_violated: rng.gen_bool(0.2),
                loss_contrib: if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..50.0) },
            }
        })
        .collect()
}

fn c5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tol = 1e-12;
    for case in 0..100 {
        let n = rng.gen_range(1..60);
        let mut eq = vec![rng.gen_range(50.0..150.0)];
        for _ in 1..n {
            let last = *eq.last().unwrap();
            eq.push(last * (1.0 + rng.gen_range(-0.2..0.2)));
        }
        let m = max_drawdown(&eq).map_err(|e| e.to_string())?;
        ensure(rel_close(m, mdd_oracle(&eq), tol), format!("case {case}: MDD {m} vs {}", mdd_oracle(&eq)))?;
        let r: Vec<f64> = (0..rng.gen_range(1..300)).map(|_| rng.gen_range(-0.05..0.05)).collect();
        for a in [50u64, 75, 90, 95, 99] {
            let got = cvar(&r, a as f64 / 100.0).map_err(|e| e.to_string())?;
            let want = cvar_oracle(&r, a);
            ensure(rel_close(got, want, tol), format!("case {case}: CVaR_{a} {got} vs {want}"))?;
        }

        let labels = random_labels(&mut rng);
        let exec: Vec<&ActionLabel> = labels.iter().filter(|l| l.executed).collect();
        match dg_rate(&labels) {
            Ok(v) => {
                let want = exec.iter().filter(|l| !l.executed_in_scope).count() as f64 / exec.len() as f64;
                ensure(rel_close(v, want, tol), format!("case {case}: dg_rate {v} vs {want}"))?;
            }
            Err(_) => ensure(exec.is_empty(), format!("case {case}: dg_rate errored on a nonempty log"))?,
        }
        match dg_loss(&labels, 1e-12) {
            Ok(v) => {
                let mut oos = 0.0;
                let mut all = 0.0;
                for l in &exec {
                    all += l.loss_contrib.abs();
                    oos += if l.executed_in_scope { 0.0 } else { l.loss_contrib };
                }
                let want = oos / (all + 1e-12);
                ensure(rel_close(v, want, tol), format!("case {case}: dg_loss {v} vs {want}"))?;
            }
            Err(_) => ensure(exec.is_empty(), format!("case {case}: dg_loss errored on a nonempty log"))?,
        }
        let mut atk: Vec<&ActionLabel> = labels.iter().filter(|l| l.is_attack).collect();
        atk.sort_by_key(|l| l.attempt_id);
        let (mut attempts, mut hits) = (0usize, 0usize);
        let mut i = 0;
        while i < atk.len() {
            let id = atk[i].attempt_id;
            let mut hit = false;
            while i < atk.len() && atk[i].attempt_id == id {
                hit = hit || (atk[i].executed && (!atk[i].executed_in_scope || atk[i].caps_violated));
                i += 1;
            }
            attempts += 1;
            hits += hit as usize;
        }
        match attack_success(&labels) {
            Ok(v) => ensure(
                rel_close(v, hits as f64 / attempts as f64, tol),
                format!("case {case}: AS {v} vs {hits}/{attempts}"),
            )?,
            Err(_) => ensure(attempts == 0, format!("case {case}: AS errored with attacks present"))?,
        }
        let legit: Vec<&ActionLabel> = labels.iter().filter(|l| !l.is_attack && l.in_scope).collect();
        match false_block(&labels, false) {
            Ok(v) => {
                let want = legit.iter().filter(|l| l.decision == Decision::Block).count() as f64 / legit.len() as f64;
                ensure(rel_close(v, want, tol), format!("case {case}: FB {v} vs {want}"))?;
            }
            Err(_) => ensure(legit.is_empty(), format!("case {case}: FB errored with legit actions"))?,
        }
    }
    Ok("100 randomized series and logs match brute force at 1e-12".into())
}

// ------------------------------------------------------------------ C6

/// Minimizes the weighted distance over a grid of step `h` on the feasible
/// box. The objective is a sum of per-axis terms over a product set, so the
/// grid optimum is found axis by axis.
fn grid_best(a: &ActionVector, b: &BudgetVector, w: &[f64; 3], h: f64) -> (ActionVector, f64) {
    let axis = |x: f64, cap: f64, wt: f64| {
        let steps = (cap / h).floor() as usize;
        let mut best = (0.0, f64::INFINITY);
        for k in 0..=steps {
            let g = k as f64 * h;
            let d = wt * (x - g) * (x - g);
            if d < best.1 {
                best = (g, d);
            }
        }
        // The cap itself is feasible even when it is off-grid.
        let d = wt * (x - cap) * (x - cap);
        if d < best.1 {
            best = (cap, d);
        }
        best
    };
    let l = axis(a.leverage, b.leverage_cap, w[0]);
    let n = axis(a.notional, b.notional_cap, w[1]);
    let s = axis(a.slippage_bps, b.slippage_cap_bps, w[2]);
    (
        ActionVector {
            leverage: l.0,
            notional: n.0,
            slippage_bps: s.0,
        },
        (l.1 + n.1 + s.1).sqrt(),
    )
}

fn c6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-3;
    for case in 0..1000 {
        let a = ActionVector {
            leverage: rng.gen_range(0.0..20.0),
            notional: rng.gen_range(0.0..3.0),
            slippage_bps: rng.gen_range(0.0..60.0),
        };
        let b = BudgetVector {
            leverage_cap: rng.gen_range(0.5..10.0),
            notional_cap: rng.gen_range(0.0..1.5),
            slippage_cap_bps: rng.gen_range(0.0..40.0),
            ..default_budget()
        };
        let w = [rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0)];
        let p = project_action(&a, &b, &w);
        ensure(b.contains(&p.action), format!("case {case}: projection infeasible"))?;
        let again = project_action(&p.action, &b, &w);
        ensure(again.action == p.action && again.distance == 0.0, format!("case {case}: not idempotent"))?;
        let (g, gd) = grid_best(&a, &b, &w, h);
        ensure(p.distance <= gd + 1e-12, format!("case {case}: grid beats projection ({gd} < {})", p.distance))?;
        ensure(gd - p.distance <= h, format!("case {case}: distance gap {} exceeds grid step", gd - p.distance))?;
        let comp = [
            (p.action.leverage, g.leverage),
            (p.action.notional, g.notional),
            (p.action.slippage_bps, g.slippage_bps),
        ];
        ensure(comp.iter().all(|(x, y)| (x - y).abs() <= h), format!("case {case}: argmin differs beyond step"))?;
    }
    Ok("1000 pairs: feasible, idempotent, grid-optimal within 1e-3".into())
}

// ------------------------------------------------------------------ C7

fn wilcoxon_enumeration(d: &[f64]) -> f64 {
    let n = d.len();
    // Midrank by counting: below + (equal + 1) / 2, doubled.
    let r2: Vec<u64> = d
        .iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as u64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as u64;
            2 * below + equal + 1
        })
        .collect();
    let obs: u64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| r2[i]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: u64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| r2[i]).sum();
        le += (w <= obs) as u64;
        ge += (w >= obs) as u64;
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

/// erfc via the all-positive series erf(x) = 2/sqrt(pi) e^{-x^2}
/// sum 2^k x^{2k+1} / (1*3*...*(2k+1)), summed until terms vanish.
fn erfc_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut k = 0.0;
    while term > 1e-30 * sum {
        k += 1.0;
        term *= 2.0 * x * x / (2.0 * k + 1.0);
        sum += term;
    }
    1.0 - 2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

/// Pooled z from exact integer arithmetic; only the final square root and
/// tail are floating point.
fn two_prop_oracle(s1: i128, n1: i128, s2: i128, n2: i128) -> (f64, f64) {
    // z^2 = (s1 n2 - s2 n1)^2 (n1 + n2) / (n1 n2 (s1+s2) (n1+n2-s1-s2))
    let num = (s1 * n2 - s2 * n1).pow(2) * (n1 + n2);
    let den = n1 * n2 * (s1 + s2) * (n1 + n2 - s1 - s2);
    let z = ((num as f64) / (den as f64)).sqrt() * ((s1 * n2 - s2 * n1).signum() as f64);
    (z, erfc_series(z.abs() / std::f64::consts::SQRT_2))
}

fn iid_bootstrap_oracle(r: &[f64], n_boot: usize, seed: u64, level: f64) -> (f64, f64) {
    let n = r.len();
    let mut means = Vec::with_capacity(n_boot);
    for b in 0..n_boot {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
        let s: f64 = (0..n).map(|_| r[rng.gen_range(0..n)]).sum();
        means.push(s / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |q: f64| {
        let pos = q * (n_boot - 1) as f64;
        let i = pos as usize;
        let j = (i + 1).min(n_boot - 1);
        means[i] * (1.0 - (pos - i as f64)) + means[j] * (pos - i as f64)
    };
    let t = (1.0 - level) / 2.0;
    (pct(t), pct(1.0 - t))
}

fn c7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..50 {
        let n = 5 + case % 6;
        // Small integer differences so ties occur.
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(1..8) as f64 * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let zero = vec![0.0; n];
        let got = wilcoxon_signed_rank(&a, &zero).map_err(|e| e.to_string())?;
        let want = wilcoxon_enumeration(&a);
        ensure((got.p_value - want).abs() <= 1e-12, format!("case {case} (n={n}): p {} vs {want}", got.p_value))?;
    }
    let mut fixtures = vec![(90i128, 100i128, 70i128, 100i128), (30, 40, 12, 35), (5, 9, 1, 11)];
    for _ in 0..50 {
        let n1 = rng.gen_range(5..500);
        let n2 = rng.gen_range(5..500);
        fixtures.push((rng.gen_range(1..n1), n1, rng.gen_range(1..n2), n2));
    }
    for (s1, n1, s2, n2) in fixtures {
        let got = two_proportion_test(s1 as u64, n1 as u64, s2 as u64, n2 as u64).map_err(|e| e.to_string())?;
        let (z, p) = two_prop_oracle(s1, n1, s2, n2);
        ensure(
            (got.z - z).abs() <= 1e-10 && (got.p_value - p).abs() <= 1e-10,
            format!("{s1}/{n1} vs {s2}/{n2}: z {} p {} vs z {z} p {p}", got.z, got.p_value),
        )?;
    }
    for seed in [1u64, 9, 42] {
        let r: Vec<f64> = (0..150).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let ci = block_bootstrap_ci(&r, 1, 500, seed, 0.95).map_err(|e| e.to_string())?;
        let (lo, hi) = iid_bootstrap_oracle(&r, 500, seed, 0.95);
        ensure(
            rel_close(ci.lo, lo, 1e-12) && rel_close(ci.hi, hi, 1e-12),
            format!("seed {seed}: ({}, {}) vs ({lo}, {hi})", ci.lo, ci.hi),
        )?;
    }
    Ok("Wilcoxon = enumeration on 50 fixtures, two-proportion within 1e-10, block_len=1 = iid bootstrap".into())
}

// ------------------------------------------------------------------ C8

fn c8() -> Check {
    let mut worst = 0.0f64;
    for (seed, v) in [(1u64, Variant::NoSae), (2, Variant::Full), (3, Variant::StaticOms), (4, Variant::NoSae)] {
        let r = replay(v, seed, 2000, |p| {
            p.strategy.kind = StrategyKind::Churn;
        });
        let l = &r.ledger;
        let delta = r.final_wallet - r.initial_wallet;
        let parts = l.realized_pnl - l.fees - l.funding - l.liquidation_charges;
        let resid = (delta - parts).abs();
        worst = worst.max(resid).max(r.max_cash_residual);
        ensure(resid <= 1e-9, format!("seed {seed}: wallet delta residual {resid}"))?;
        ensure(r.max_cash_residual <= 1e-9, format!("seed {seed}: step residual {}", r.max_cash_residual))?;
        ensure(l.funding != 0.0, format!("seed {seed}: no funding was exchanged"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.gen_range(1..200);
        let times: Vec<i64> = (0..n).map(|i| i as i64 * 900_000).collect();
        let last = *times.last().unwrap();
        let ev: Vec<(i64, f64)> = (0..rng.gen_range(0..50))
            .map(|_| (rng.gen_range(-900_000..=last), rng.gen_range(-0.001..0.001)))
            .collect();
        let out = align_funding(&times, &ev).map_err(|e| e.to_string())?;
        let total: f64 = ev.iter().map(|e| e.1).sum();
        let got: f64 = out.iter().sum();
        ensure((total - got).abs() <= 1e-12, format!("funding total {got} vs {total}"))?;
    }
    Ok(format!("cash identity residual <= {worst:.2e}; funding alignment conserves totals"))
}

// ------------------------------------------------------------------ C9

fn small_opt_cfg(out: &Path) -> RunConfig {
    let mut c = RunConfig {
        end: "2025-09-15".into(),
        output_dir: out.join("runs").display().to_string(),
        ..RunConfig::default()
    };
    c.optimize.batch_trials = 5;
    c.optimize.max_batches = 4;
    c.optimize.output_dir = out.join("auto").display().to_string();
    c
}

fn c9() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = small_opt_cfg(tmp.path());
    let bars = synth_bars(&cfg).map_err(|e| e.to_string())?;
    let space = cfg.optimize.space.clone();

    let one = tmp.path().join("one");
    let full = optimize(&cfg, &space, &bars, &one, false).map_err(|e| e.to_string())?;
    let incumbents: Vec<_> = full.trace.iter().filter(|t| t.improved).collect();
    ensure(!incumbents.is_empty(), "no incumbent")?;
    ensure(
        incumbents.windows(2).all(|w| w[1].score < w[0].score),
        "incumbent scores not strictly decreasing",
    )?;
    let cons = Constraints::from(&cfg.optimize);
    ensure(incumbents.iter().all(|t| feasible(&t.metrics, &cons)), "infeasible incumbent")?;

    let split = tmp.path().join("split");
    let k = RunConfig {
        optimize: sae_core::config::OptimizeConfig {
            max_batches: 2,
            ..cfg.optimize.clone()
        },
        ..cfg.clone()
    };
    optimize(&k, &space, &bars, &split, false).map_err(|e| e.to_string())?;
    optimize(&cfg, &space, &bars, &split, true).map_err(|e| e.to_string())?;
    let a = std::fs::read(one.join("best.json")).map_err(|e| e.to_string())?;
    let b = std::fs::read(split.join("best.json")).map_err(|e| e.to_string())?;
    ensure(a == b, "resumed best.json differs from the single run")?;

    let mut wf = cfg.clone();
    wf.optimize.test_start = Some("2025-09-11".into());
    wf.optimize.output_dir = tmp.path().join("wf").display().to_string();
    let guard = GuardedBars::new(bars);
    let rep = walk_forward(&wf, &guard, false).map_err(|e| e.to_string())?;
    ensure(rep.test_reads_during_optimization == 0, "optimization read test bars")?;
    ensure(
        rep.touched_during_optimization.iter().all(|(_, e)| *e <= rep.split.test.0),
        "a touched window crosses into the test segment",
    )?;
    Ok(format!(
        "{} incumbents, best J {:.5}; resume byte-identical; walk-forward touched {:?} only",
        incumbents.len(),
        full.incumbent.score,
        rep.touched_during_optimization
    ))
}

// ----------------------------------------------------------------- C10

fn c10() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = RunConfig {
        end: "2025-09-15".into(),
        cache_dir: tmp.path().join("cache").display().to_string(),
        ..RunConfig::default()
    };
    let mut client = BinanceClient::new(OfflineTransport);
    fetch_with(&base, &mut client).map_err(|e| e.to_string())?;
    let venue = RunConfig {
        mode: DataMode::Binance,
        ..base
    };
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let cfg = RunConfig {
            output_dir: tmp.path().join(run).display().to_string(),
            ..venue.clone()
        };
        let mut cache = Cache::open(&cfg.cache_root()).map_err(|e| e.to_string())?;
        let loaded = venue_bars_with(&cfg, &mut client, &mut cache).map_err(|e| e.to_string())?;
        outs.push(attack_eval_on(&cfg, &Variant::ALL, &loaded).map_err(|e| e.to_string())?.dir);
    }
    ensure(client.calls() == 0, "fixture cache missed")?;
    for v in Variant::ALL {
        for f in ["audit.jsonl", "metrics.json"] {
            let a = std::fs::read(outs[0].join(v.as_str()).join(f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(outs[1].join(v.as_str()).join(f)).map_err(|e| e.to_string())?;
            ensure(!a.is_empty() && a == b, format!("{} {f} differs", v.as_str()))?;
        }
    }
    Ok("five variants, audit.jsonl and metrics.json byte-identical across reruns".into())
}

fn main() {
    let checks: [(&str, &str, u64, fn() -> Check); 10] = [
        ("C1", "walkthrough budgets and LIMIT decision", 1, c1),
        ("C2", "pass-through variant: AS=1, FB=0", 10, c2),
        ("C3", "deterministic blocking under Full", 30, c3),
        ("C4", "survivability ordering on adversarial fixture", 60, c4),
        ("C5", "estimator brute-force oracles", 30, c5),
        ("C6", "projection properties", 30, c6),
        ("C7", "statistics correctness", 60, c7),
        ("C8", "funding conservation and cash accounting", 10, c8),
        ("C9", "optimizer contract", 120, c9),
        ("C10", "end-to-end determinism", 60, c10),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in checks {
        let t = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let dt = t.elapsed();
        let res = match res {
            Ok(m) if dt > Duration::from_secs(budget) => Err(format!("over time budget {budget}s: {m}")),
            r => r,
        };
        match res {
            Ok(m) => println!("{id} PASS [{:.2}s/{budget}s] {name}: {m}", dt.as_secs_f64()),
            Err(m) => {
                failed += 1;
                println!("{id} FAIL [{:.2}s/{budget}s] {name}: {m}", dt.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
