//! On-disk cache: one CSV (or JSON) file per fetched window plus a
//! `manifest.json` holding each file's sha256. Reads verify the checksum and
//! fail on mismatch.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DataError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub endpoint: String,
    pub symbol: String,
    /// Empty for endpoints without an interval.
    pub interval: String,
    pub start_ms: i64,
    pub end_ms: i64,
    /// Relative to the cache root.
    pub path: String,
    pub sha256: String,
    pub fetched_at_ms: i64,
    pub rows: usize,
}

impl CacheEntry {
    fn same_key(&self, endpoint: &str, symbol: &str, interval: &str) -> bool {
        self.endpoint == endpoint && self.symbol == symbol && self.interval == interval
    }

    pub fn covers(&self, start_ms: i64, end_ms: i64) -> bool {
        self.start_ms <= start_ms && end_ms <= self.end_ms
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<CacheEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
    manifest: Manifest,
}

impl Cache {
    /// Opens (or starts) a cache rooted at `root`.
    pub fn open(root: &Path) -> Result<Self, DataError> {
        let mpath = root.join(MANIFEST);
        let manifest = if mpath.exists() {
            let text = fs::read_to_string(&mpath).map_err(|e| DataError::io(&mpath, e))?;
            serde_json::from_str(&text).map_err(|e| DataError::Parse(format!("{}: {e}", mpath.display())))?
        } else {
            Manifest::default()
        };
        Ok(Cache {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn lookup(&self, endpoint: &str, symbol: &str, interval: &str, start_ms: i64, end_ms: i64) -> Option<&CacheEntry> {
        self.manifest
            .entries
            .iter()
            .find(|e| e.same_key(endpoint, symbol, interval) && e.covers(start_ms, end_ms))
    }

    /// File contents after checksum verification.
    pub fn read(&self, e: &CacheEntry) -> Result<String, DataError> {
        let p = self.root.join(&e.path);
        let bytes = fs::read(&p).map_err(|err| DataError::io(&p, err))?;
        let actual = sha256_hex(&bytes);
        if actual != e.sha256 {
            return Err(DataError::ChecksumMismatch {
                path: p.display().to_string(),
                expected: e.sha256.clone(),
                actual,
            });
        }
        String::from_utf8(bytes).map_err(|err| DataError::Parse(err.to_string()))
    }

    /// Checks every entry; returns the first mismatch.
    pub fn verify_all(&self) -> Result<(), DataError> {
        for e in &self.manifest.entries {
            self.read(e)?;
        }
        Ok(())
    }

    /// Writes a window and records it, dropping entries for the same key
    /// whose windows overlap the new one.
    #[allow(clippy::too_many_arguments)]
    pub fn store(
        &mut self,
        endpoint: &str,
        symbol: &str,
        interval: &str,
        start_ms: i64,
        end_ms: i64,
        ext: &str,
        content: &str,
        rows: usize,
        fetched_at_ms: i64,
    ) -> Result<CacheEntry, DataError> {
        let dir = self.root.join(endpoint);
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        let name = if interval.is_empty() {
            format!("{symbol}_{start_ms}_{end_ms}.{ext}")
        } else {
            format!("{symbol}_{interval}_{start_ms}_{end_ms}.{ext}")
        };
        let p = dir.join(&name);
        fs::write(&p, content).map_err(|e| DataError::io(&p, e))?;
        let entry = CacheEntry {
            endpoint: endpoint.into(),
            symbol: symbol.into(),
            interval: interval.into(),
            start_ms,
            end_ms,
            path: format!("{endpoint}/{name}"),
            sha256: sha256_hex(content.as_bytes()),
            fetched_at_ms,
            rows,
        };
        self.manifest.entries.retain(|e| {
            !(e.same_key(endpoint, symbol, interval) && e.start_ms < end_ms && start_ms < e.end_ms)
        });
        self.manifest.entries.push(entry.clone());
        self.manifest
            .entries
            .sort_by(|a, b| (&a.endpoint, &a.symbol, &a.interval, a.start_ms).cmp(&(&b.endpoint, &b.symbol, &b.interval, b.start_ms)));
        self.save()?;
        Ok(entry)
    }

    fn save(&self) -> Result<(), DataError> {
        fs::create_dir_all(&self.root).map_err(|e| DataError::io(&self.root, e))?;
        let p = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&p, text + "\n").map_err(|e| DataError::io(&p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_lookup_verify() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Cache::open(dir.path()).unwrap();
        let e = c.store("klines", "BTCUSDT", "15m", 0, 100, "csv", "a,b\n1,2\n", 1, 5).unwrap();
        assert_eq!(c.read(&e).unwrap(), "a,b\n1,2\n");
        let again = Cache::open(dir.path()).unwrap();
        assert!(again.lookup("klines", "BTCUSDT", "15m", 10, 90).is_some());
        assert!(again.lookup("klines", "BTCUSDT", "15m", 10, 110).is_none());
        assert!(again.lookup("klines", "BTCUSDT", "1h", 10, 90).is_none());
    }

    #[test]
    fn tampered_file_fails_loudly() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Cache::open(dir.path()).unwrap();
        let e = c.store("funding", "BTCUSDT", "", 0, 100, "csv", "t,r\n", 0, 5).unwrap();
        fs::write(dir.path().join(&e.path), "t,r\n1,0.5\n").unwrap();
        assert!(matches!(c.read(&e), Err(DataError::ChecksumMismatch { .. })));
        assert!(c.verify_all().is_err());
    }

    #[test]
    fn overlapping_windows_are_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Cache::open(dir.path()).unwrap();
        c.store("klines", "X", "15m", 0, 100, "csv", "1", 1, 0).unwrap();
        c.store("klines", "X", "15m", 100, 200, "csv", "2", 1, 0).unwrap();
        c.store("klines", "X", "15m", 50, 150, "csv", "3", 1, 0).unwrap();
        let starts: Vec<i64> = c.manifest().entries.iter().map(|e| e.start_ms).collect();
        assert_eq!(starts, vec![50]);
    }
}
