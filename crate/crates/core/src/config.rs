//! Run configuration. Values come from the shipped defaults, then a YAML
//! file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attacks::AttackConfig;
use crate::autoopt::SearchSpace;
use crate::data::{parse_date_ms, SynthConfig};
use crate::dg::IntendedPolicySpec;
use crate::enforcement::{GateConfig, Variant};
use crate::market_state::FeatureConfig;
use crate::sim::{SimConfig, StrategyConfig, TrustConfig};
use crate::trader_state::{CalibratedModel, FeatureParams};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CACHE_DIR_ENV: &str = "SAE_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Cached (or freshly fetched) venue klines and funding.
    Binance,
    /// Seeded synthetic bars.
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    Fail,
    ForwardFill,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraderConfig {
    pub model: CalibratedModel,
    pub params: FeatureParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub block_len: usize,
    pub n_boot: usize,
    pub level: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            block_len: 24,
            n_boot: 1000,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub batch_trials: usize,
    pub max_batches: usize,
    pub patience: usize,
    pub falseblock_max: f64,
    pub attacksucc_max: f64,
    pub latency_max_ms: Option<f64>,
    pub max_liquidations: u32,
    /// Weights on MDD, |CVaR_0.99|, DG_loss and latency.
    pub weights: [f64; 4],
    pub workers: usize,
    /// First day of the held-out test segment (`YYYY-MM-DD`).
    pub test_start: Option<String>,
    pub output_dir: String,
    pub space: SearchSpace,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            batch_trials: 20,
            max_batches: 20,
            patience: 5,
            falseblock_max: 0.20,
            attacksucc_max: 0.80,
            latency_max_ms: None,
            max_liquidations: 0,
            weights: [1.0, 10.0, 1.0, 0.01],
            workers: 4,
            test_start: None,
            output_dir: "outputs_auto".into(),
            space: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: DataMode,
    pub symbols: Vec<String>,
    pub venue: String,
    pub interval: String,
    pub start: String,
    pub end: String,
    pub variant: Variant,
    pub seed: u64,
    pub gap_policy: GapPolicy,
    /// `None` uses the built-in policy.
    pub policy_path: Option<String>,
    /// Directory searched for `mm_tiers_<symbol>.csv`.
    pub tiers_dir: String,
    pub cache_dir: String,
    pub output_dir: String,
    pub sim: SimConfig,
    pub strategy: StrategyConfig,
    pub attacks: AttackConfig,
    pub features: FeatureConfig,
    pub gate: GateConfig,
    pub scope: IntendedPolicySpec,
    pub trust: TrustConfig,
    pub trader: TraderConfig,
    pub synth: SynthConfig,
    pub report: ReportConfig,
    pub optimize: OptimizeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: DataMode::Synth,
            symbols: vec!["BTCUSDT".into()],
            venue: "binance-usdm".into(),
            interval: "15m".into(),
            start: "2025-09-01".into(),
            end: "2025-10-01".into(),
            variant: Variant::Full,
            seed: 42,
            gap_policy: GapPolicy::Fail,
            policy_path: None,
            tiers_dir: "configs".into(),
            cache_dir: "data_cache".into(),
            output_dir: "outputs".into(),
            sim: SimConfig::default(),
            strategy: StrategyConfig::default(),
            attacks: AttackConfig::default(),
            features: FeatureConfig::default(),
            gate: GateConfig::default(),
            scope: IntendedPolicySpec::default(),
            trust: TrustConfig::default(),
            trader: TraderConfig::default(),
            synth: SynthConfig::default(),
            report: ReportConfig::default(),
            optimize: OptimizeConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let c: RunConfig = serde_yaml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_yaml(&text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.symbols.is_empty() {
            return bad("symbols must not be empty".into());
        }
        if crate::bar::interval_ms(&self.interval).is_none() {
            return bad(format!("unknown interval {}", self.interval));
        }
        let (s, e) = self.window_ms()?;
        if e <= s {
            return bad(format!("end {} is not after start {}", self.end, self.start));
        }
        if let Some(t) = &self.optimize.test_start {
            let t = parse_date_ms(t).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !(s < t && t < e) {
                return bad("optimize.test_start must fall strictly inside the window".into());
            }
        }
        self.features.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !self.sim.fill.is_valid() || !(self.sim.initial_equity > 0.0) {
            return bad("sim needs positive equity and nonnegative fill parameters".into());
        }
        let o = &self.optimize;
        if o.weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("optimize.weights must be nonnegative".into());
        }
        if o.batch_trials == 0 || o.max_batches == 0 {
            return bad("optimize.batch_trials and max_batches must be >= 1".into());
        }
        o.space.validate().map_err(|e| ConfigError::Invalid(format!("optimize.space: {e}")))?;
        if self.report.block_len == 0 || self.report.n_boot < 100 {
            return bad("report needs block_len >= 1 and n_boot >= 100".into());
        }
        Ok(())
    }

    pub fn interval_ms(&self) -> i64 {
        crate::bar::interval_ms(&self.interval).expect("validated interval")
    }

    pub fn window_ms(&self) -> Result<(i64, i64), ConfigError> {
        let s = parse_date_ms(&self.start).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let e = parse_date_ms(&self.end).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok((s, e))
    }

    pub fn symbol(&self) -> &str {
        &self.symbols[0]
    }

    /// Cache root, honoring the environment override.
    pub fn cache_root(&self) -> PathBuf {
        std::env::var_os(CACHE_DIR_ENV).map_or_else(|| PathBuf::from(&self.cache_dir), PathBuf::from)
    }

    /// Hash of the config, seed and code version; short hex. Output and
    /// cache locations do not change results and are left out.
    pub fn run_id(&self) -> String {
        let mut c = self.clone();
        c.output_dir.clear();
        c.cache_dir.clear();
        c.optimize.output_dir.clear();
        let mut h = Sha256::new();
        h.update(c.to_yaml().as_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(CODE_VERSION.as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }
}
