//! Data and replay pipeline against an on-disk fixture cache, offline.

use sae_core::config::{DataMode, RunConfig};
use sae_core::data::{BinanceClient, Cache, OfflineTransport};
use sae_core::dg::{attack_success, false_block};
use sae_core::enforcement::Variant;
use sae_core::runner::{attack_eval_on, fetch_with, synth_bars, venue_bars_with, LoadedBars, RunError};

fn fixture(dir: &std::path::Path) -> RunConfig {
    let cfg = RunConfig {
        end: "2025-09-04".into(),
        cache_dir: dir.join("cache").display().to_string(),
        output_dir: dir.join("out").display().to_string(),
        ..RunConfig::default()
    };
    fetch_with(&cfg, &mut BinanceClient::new(OfflineTransport)).unwrap();
    RunConfig {
        mode: DataMode::Binance,
        ..cfg
    }
}

fn load(cfg: &RunConfig) -> Result<LoadedBars, RunError> {
    let mut cache = Cache::open(&cfg.cache_root()).unwrap();
    venue_bars_with(cfg, &mut BinanceClient::new(OfflineTransport), &mut cache)
}

#[test]
fn fixture_cache_replays_like_synthetic_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let venue = load(&cfg).unwrap();
    let synth = synth_bars(&RunConfig {
        mode: DataMode::Synth,
        ..cfg.clone()
    })
    .unwrap();
    assert_eq!(venue.bars.len(), synth.len());
    assert!(venue.flags.is_empty());
    for (a, b) in venue.bars.iter().zip(&synth) {
        assert_eq!((a.open_time_ms, a.close), (b.open_time_ms, b.close));
    }
    let funded: f64 = venue.bars.iter().map(|b| b.funding_rate).sum();
    let expected: f64 = synth.iter().map(|b| b.funding_rate).sum();
    assert!((funded - expected).abs() < 1e-15);
}

#[test]
fn legitimate_stream_is_never_blocked() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture(tmp.path());
    cfg.mode = DataMode::Synth;
    cfg.attacks.enabled = false;
    let bars = synth_bars(&cfg).unwrap();
    let loaded = LoadedBars { bars, flags: Vec::new() };
    let ev = attack_eval_on(&cfg, &Variant::ALL, &loaded).unwrap();
    for (v, r) in &ev.runs {
        let labels = r.labels();
        assert!(labels.iter().all(|l| !l.is_attack));
        assert_eq!(false_block(&labels, false).unwrap(), 0.0, "{v}");
        assert!(attack_success(&labels).is_err(), "{v}: no attempts, no rate");
    }
}
