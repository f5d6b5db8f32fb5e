//! Run manifests: one JSON object per line in `<out>/manifest.jsonl`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rgse_core::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FILE_NAME: &str = "manifest.jsonl";

/// Overrides the revision string recorded in manifests.
pub const REVISION_ENV: &str = "RGSE_REVISION";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the resolved configuration, empty for commands without one.
    pub fingerprint: String,
    /// Artifact paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub started: u64,
    pub finished: u64,
    pub revision: Option<String>,
}

/// Hex SHA-256 over the sorted `key=value` lines of the configuration.
pub fn fingerprint(config: &ExperimentConfig) -> String {
    let mut h = Sha256::new();
    for (k, v) in config.to_pairs() {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn revision() -> Option<String> {
    if let Ok(r) = std::env::var(REVISION_ENV) {
        return Some(r);
    }
    let out = std::process::Command::new("git").args(["rev-parse", "--short", "HEAD"]).output().ok()?;
    let r = String::from_utf8(out.stdout).ok()?.trim().to_string();
    (out.status.success() && !r.is_empty()).then_some(r)
}

impl RunManifest {
    pub fn new(command: &str, fingerprint: String) -> Self {
        RunManifest {
            command: command.to_string(),
            fingerprint,
            artifacts: Vec::new(),
            started: now(),
            finished: 0,
            revision: revision(),
        }
    }

    /// Append to the manifest file of `out_dir`.
    pub fn append(&mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished = now();
        let path = out_dir.join(FILE_NAME);
        let line = serde_json::to_string(self).expect("manifest is plain data");
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn read_manifests(out_dir: &Path) -> Result<Vec<RunManifest>> {
    let path = out_dir.join(FILE_NAME);
    crate::error::read(&path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(&path, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_tracks_config() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(fingerprint(&a), fingerprint(&b));
        assert_eq!(fingerprint(&a).len(), 64);
        b.d_hidden += 1;
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn manifests_append() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("train", "abc".into());
        m.artifacts.push("x.csv".into());
        m.append(dir.path()).unwrap();
        m.append(dir.path()).unwrap();
        let all = read_manifests(dir.path()).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].artifacts, ["x.csv"]);
    }
}
