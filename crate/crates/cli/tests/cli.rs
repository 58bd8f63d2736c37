//! Drives the `sae` binary end to end on short synthetic windows.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const WINDOW: [&str; 4] = ["--start", "2025-09-01", "--end", "2025-09-04"];

fn sae(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sae"))
        .current_dir(cwd)
        .env("SAE_CACHE_DIR", cwd.join("cache"))
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The directory printed after `->`.
fn out_dir(cwd: &Path, stdout: &str) -> PathBuf {
    let tail = stdout.lines().find_map(|l| l.split("->").nth(1)).expect("output dir printed");
    cwd.join(tail.trim())
}

fn replay(cwd: &Path, variant: &str, out: &str) -> PathBuf {
    let mut args = vec!["replay", "--variant", variant, "--output-dir", out];
    args.extend(WINDOW);
    let stdout = ok(&sae(cwd, &args));
    out_dir(cwd, &stdout)
}

#[test]
fn every_variant_replays_and_identical_seeds_agree() {
    let tmp = tempfile::tempdir().unwrap();
    for v in ["NoSAE", "StaticOMS", "Budget", "BudgetCooldown", "Full"] {
        let dir = replay(tmp.path(), v, "a");
        for f in ["equity.csv", "actions.jsonl", "audit.jsonl", "metrics.json"] {
            assert!(dir.join(f).is_file(), "{v}: missing {f}");
        }
    }
    let a = replay(tmp.path(), "Full", "a");
    let b = replay(tmp.path(), "Full", "b");
    assert_eq!(a.file_name(), b.file_name(), "run_id ignores the output location");
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
    assert_eq!(fs::read(a.join("audit.jsonl")).unwrap(), fs::read(b.join("audit.jsonl")).unwrap());

    let mut args = vec!["replay", "--variant", "Full", "--output-dir", "c", "--seed", "7"];
    args.extend(WINDOW);
    let c = out_dir(tmp.path(), &ok(&sae(tmp.path(), &args)));
    assert_ne!(a.file_name(), c.file_name());
}

#[test]
fn missing_tiers_file_falls_back_and_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["replay", "--tiers-dir", "no_such_dir", "--output-dir", "o"];
    args.extend(WINDOW);
    let stdout = ok(&sae(tmp.path(), &args));
    assert!(stdout.contains("margin_tiers_fallback"), "{stdout}");
    let m = fs::read_to_string(out_dir(tmp.path(), &stdout).join("metrics.json")).unwrap();
    assert!(m.contains("margin_tiers_fallback"));
}

#[test]
fn fetch_is_cached_and_checksums_are_enforced() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["fetch"];
    args.extend(WINDOW);
    let first = ok(&sae(tmp.path(), &args));
    assert!(first.contains("(0 network calls)"), "{first}");
    let manifest = tmp.path().join("cache/manifest.json");
    let before = fs::read(&manifest).unwrap();
    let second = ok(&sae(tmp.path(), &args));
    assert!(second.contains("(0 network calls)"));
    assert_eq!(before, fs::read(&manifest).unwrap(), "re-fetch rewrote the manifest");

    // The fixture cache serves venue mode without touching the network.
    let mut venue = vec!["replay", "--mode", "binance", "--output-dir", "o"];
    venue.extend(WINDOW);
    let stdout = ok(&sae(tmp.path(), &venue));
    assert!(!stdout.contains("synthetic_data"));

    let entries: serde_json::Value = serde_json::from_slice(&before).unwrap();
    let rel = entries["entries"][0]["path"].as_str().unwrap();
    let data = tmp.path().join("cache").join(rel);
    let mut bytes = fs::read(&data).unwrap();
    bytes.extend_from_slice(b"tampered\n");
    fs::write(&data, bytes).unwrap();

    let o = sae(tmp.path(), &args);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = sae(tmp.path(), &venue);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn attack_eval_writes_one_directory_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["attack-eval", "--variants", "NoSAE,Full", "--output-dir", "o"];
    args.extend(WINDOW);
    let stdout = ok(&sae(tmp.path(), &args));
    let dir = out_dir(tmp.path(), &stdout);
    assert!(dir.join("NoSAE/metrics.json").is_file());
    assert!(dir.join("Full/metrics.json").is_file());
    assert!(!dir.join("Budget").exists());
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[0]["attack_success"], 1.0);
}

#[test]
fn report_compares_runs_and_rejects_malformed_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = replay(tmp.path(), "NoSAE", "o");
    let b = replay(tmp.path(), "Full", "o");
    let (a, b) = (a.display().to_string(), b.display().to_string());
    let stdout = ok(&sae(tmp.path(), &["report", &a, &b, "--out", "rep"]));
    assert!(stdout.contains("NoSAE") && stdout.contains("Full"), "{stdout}");
    let json = fs::read_to_string(tmp.path().join("rep/report.json")).unwrap();
    let rep: serde_json::Value = serde_json::from_str(&json).unwrap();
    let pair = &rep["pairs"][0];
    for k in ["mean_diff_ci", "wilcoxon", "two_proportion_as"] {
        assert!(!pair[k].is_null(), "{k} missing from {pair}");
    }

    fs::create_dir_all(tmp.path().join("empty")).unwrap();
    let o = sae(tmp.path(), &["report", "empty", "--out", "rep2"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("metrics.json"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sae(tmp.path(), &["replay", "--config", "absent.yaml"]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(tmp.path().join("typo.yaml"), "sead: 3\n").unwrap();
    let o = sae(tmp.path(), &["replay", "--config", "typo.yaml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sead"));

    let o = sae(tmp.path(), &["replay", "--start", "2025-09-05", "--end", "2025-09-01"]);
    assert_eq!(o.status.code(), Some(2));

    let o = sae(tmp.path(), &["replay", "--variant", "Bogus"]);
    assert!(!o.status.success());
}

#[test]
fn optimize_warns_on_patience_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let base = [
        "optimize", "--output-dir", "o", "--batch_trials", "3", "--patience", "5", "--workers", "2",
    ];
    let mut args: Vec<&str> = base.to_vec();
    args.extend(WINDOW);
    args.extend(["--max_batches", "2"]);
    let o = sae(tmp.path(), &args);
    let stderr = String::from_utf8_lossy(&o.stderr).into_owned();
    assert!(stderr.contains("patience exceeds max_batches"), "{stderr}");
    assert_eq!(stderr.matches("patience exceeds").count(), 1);
    ok(&o);

    let ck_path = tmp.path().join("o/auto/checkpoint.json");
    let ck: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ck_path).unwrap()).unwrap();
    assert_eq!(ck["batches_done"], 2);
    assert_eq!(ck["next_trial"], 6);

    let mut more: Vec<&str> = base.to_vec();
    more.extend(WINDOW);
    more.extend(["--max_batches", "3", "--resume"]);
    ok(&sae(tmp.path(), &more));
    let ck: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ck_path).unwrap()).unwrap();
    assert_eq!(ck["batches_done"], 3);
    assert_eq!(ck["next_trial"], 9);
    let trace = fs::read_to_string(tmp.path().join("o/auto/trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 9);
    assert!(tmp.path().join("o/auto/best.json").is_file());
    assert!(tmp.path().join("o/auto/best_full_params.yaml").is_file());
}
