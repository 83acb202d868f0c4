//! Run manifest: per-stage status, configuration hash and outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    /// Started but not finished; outputs must not be consumed.
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub config_hash: String,
    /// Output paths relative to the run directory.
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    /// Hash of the whole resolved configuration of the latest invocation.
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("configuration serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Manifest {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_FILE)
    }

    pub fn load_or_new(run_dir: &Path) -> Result<Self, CliError> {
        let path = Manifest::path(run_dir);
        if !path.exists() {
            return Ok(Manifest {
                format_version: FORMAT_VERSION,
                tool_version: env!("CARGO_PKG_VERSION").into(),
                config_hash: String::new(),
                stages: BTreeMap::new(),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
        if m.format_version != FORMAT_VERSION {
            return Err(CliError::Artifact(format!("{}: unsupported manifest version {}", path.display(), m.format_version)));
        }
        Ok(m)
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(run_dir).map_err(|e| CliError::io(run_dir, e))?;
        let path = Manifest::path(run_dir);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))
    }

    /// Fails unless `stage` completed under `expected_hash` and all of its
    /// outputs are still present.
    pub fn require(&self, run_dir: &Path, stage: &str, expected_hash: &str, artifact: &str) -> Result<&StageRecord, CliError> {
        let missing = || CliError::Missing { artifact: run_dir.join(artifact).display().to_string(), stage: stage.to_string() };
        let rec = self.stages.get(stage).ok_or_else(missing)?;
        if rec.status != StageStatus::Complete {
            return Err(CliError::Incomplete { stage: stage.to_string() });
        }
        if rec.config_hash != expected_hash {
            return Err(CliError::Mismatch { stage: stage.to_string(), found: rec.config_hash.clone(), expected: expected_hash.to_string() });
        }
        if let Some(lost) = rec.outputs.iter().find(|o| !run_dir.join(o).exists()) {
            return Err(CliError::Missing { artifact: run_dir.join(lost).display().to_string(), stage: stage.to_string() });
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(status: StageStatus, hash: &str, outputs: &[&str]) -> StageRecord {
        StageRecord { status, config_hash: hash.into(), outputs: outputs.iter().map(|s| s.to_string()).collect(), summary: serde_json::Value::Null }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        assert_eq!(hash_json(&("a", 1)), hash_json(&("a", 1)));
        assert_ne!(hash_json(&("a", 1)), hash_json(&("a", 2)));
        assert_eq!(hash_json(&1).len(), 64);
    }

    #[test]
    fn require_checks_status_hash_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::load_or_new(dir.path()).unwrap();
        assert!(matches!(m.require(dir.path(), "synth", "h", "cohort"), Err(CliError::Missing { .. })));
        m.stages.insert("synth".into(), record(StageStatus::Incomplete, "h", &[]));
        assert!(matches!(m.require(dir.path(), "synth", "h", "cohort"), Err(CliError::Incomplete { .. })));
        m.stages.insert("synth".into(), record(StageStatus::Complete, "h", &["cohort"]));
        assert!(matches!(m.require(dir.path(), "synth", "other", "cohort"), Err(CliError::Mismatch { .. })));
        assert!(matches!(m.require(dir.path(), "synth", "h", "cohort"), Err(CliError::Missing { .. })));
        fs::create_dir(dir.path().join("cohort")).unwrap();
        assert!(m.require(dir.path(), "synth", "h", "cohort").is_ok());
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load_or_new(dir.path()).unwrap(), m);
    }
}
