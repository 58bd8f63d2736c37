//! Tiered maintenance margin.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginTier {
    pub notional_floor: f64,
    pub notional_cap: f64,
    pub mmr: f64,
    pub maint_amount: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MarginError {
    #[error("no tier covers notional {0}")]
    NoTierCovers(f64),
    #[error("invalid tier table: {0}")]
    InvalidTable(String),
    #[error("reading tier file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginTable {
    pub tiers: Vec<MarginTier>,
    /// Set when no venue table was supplied.
    pub fallback: bool,
}

impl MarginTable {
    /// Single conservative tier used when no table is available.
    pub fn fallback() -> Self {
        MarginTable {
            tiers: vec![MarginTier {
                notional_floor: 0.0,
                notional_cap: f64::INFINITY,
                mmr: 0.01,
                maint_amount: 0.0,
            }],
            fallback: true,
        }
    }

    pub fn new(tiers: Vec<MarginTier>) -> Result<Self, MarginError> {
        let bad = |m: String| Err(MarginError::InvalidTable(m));
        if tiers.is_empty() {
            return bad("no tiers".into());
        }
        if tiers[0].notional_floor != 0.0 {
            return bad("first tier must start at 0".into());
        }
        for (i, t) in tiers.iter().enumerate() {
            if !(t.notional_cap > t.notional_floor) || t.mmr < 0.0 || t.maint_amount < 0.0 {
                return bad(format!("tier {i} is malformed"));
            }
            if i > 0 {
                let p = &tiers[i - 1];
                if p.notional_cap != t.notional_floor {
                    return bad(format!("tier {i} does not start where tier {} ends", i - 1));
                }
                if t.mmr < p.mmr {
                    return bad(format!("tier {i} lowers mmr"));
                }
            }
        }
        Ok(MarginTable {
            tiers,
            fallback: false,
        })
    }

    /// Reads `notional_floor,notional_cap,mmr,maint_amount` CSV.
    pub fn from_csv(path: &Path) -> Result<Self, MarginError> {
        let mut rd = csv::Reader::from_path(path).map_err(|e| MarginError::Io(e.to_string()))?;
        let tiers = rd
            .deserialize()
            .collect::<Result<Vec<MarginTier>, _>>()
            .map_err(|e| MarginError::Io(e.to_string()))?;
        Self::new(tiers)
    }

    /// `configs/mm_tiers_<symbol>.csv` when present, else the fallback.
    pub fn for_symbol(dir: &Path, symbol: &str) -> Result<Self, MarginError> {
        let p = dir.join(format!("mm_tiers_{symbol}.csv"));
        if p.exists() {
            Self::from_csv(&p)
        } else {
            Ok(Self::fallback())
        }
    }

    /// The tier whose range `(floor, cap]` holds `notional`; zero falls in
    /// the first tier.
    pub fn tier_for(&self, notional: f64) -> Result<&MarginTier, MarginError> {
        self.tiers
            .iter()
            .find(|t| notional <= t.notional_cap)
            .ok_or(MarginError::NoTierCovers(notional))
    }
}

/// `notional * mmr - maint_amount` for the covering tier, never negative.
pub fn maintenance_margin(notional: f64, table: &MarginTable) -> Result<f64, MarginError> {
    if notional <= 0.0 {
        return Ok(0.0);
    }
    let t = table.tier_for(notional)?;
    Ok((notional * t.mmr - t.maint_amount).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_tier() -> MarginTable {
        MarginTable::new(vec![
            MarginTier {
                notional_floor: 0.0,
                notional_cap: 50_000.0,
                mmr: 0.004,
                maint_amount: 0.0,
            },
            MarginTier {
                notional_floor: 50_000.0,
                notional_cap: 250_000.0,
                mmr: 0.005,
                maint_amount: 50.0,
            },
        ])
        .unwrap()
    }

    #[test]
    fn examples() {
        let f = MarginTable::fallback();
        assert_eq!(maintenance_margin(0.0, &f).unwrap(), 0.0);
        assert_eq!(maintenance_margin(50_000.0, &f).unwrap(), 500.0);
        let t = two_tier();
        assert_eq!(maintenance_margin(50_000.0, &t).unwrap(), 200.0);
        assert_eq!(maintenance_margin(100_000.0, &t).unwrap(), 450.0);
        assert_eq!(
            maintenance_margin(300_000.0, &t),
            Err(MarginError::NoTierCovers(300_000.0))
        );
    }

    #[test]
    fn rejects_gappy_tables() {
        let mut tiers = two_tier().tiers;
        tiers[1].notional_floor = 60_000.0;
        assert!(MarginTable::new(tiers).is_err());
    }

    #[test]
    fn reads_csv() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("mm_tiers_BTCUSDT.csv"),
            "notional_floor,notional_cap,mmr,maint_amount\n0,50000,0.004,0\n50000,250000,0.005,50\n",
        )
        .unwrap();
        assert_eq!(MarginTable::for_symbol(dir.path(), "BTCUSDT").unwrap(), two_tier());
        assert!(MarginTable::for_symbol(dir.path(), "ETHUSDT").unwrap().fallback);
    }

    proptest! {
        #[test]
        fn tier_selection_matches_scan(n in 0.0f64..250_000.0) {
            let t = two_tier();
            let mut want = None;
            for tier in &t.tiers {
                if (n > tier.notional_floor || tier.notional_floor == 0.0) && n <= tier.notional_cap {
                    want = Some(*tier);
                    break;
                }
            }
            prop_assert_eq!(Some(*t.tier_for(n).unwrap()), want);
        }
    }
}
