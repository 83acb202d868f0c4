//! Variable and severity-band configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{EwsError, Result, Seconds, HOUR};

pub const DEFAULT_VARIABLES_TOML: &str = include_str!("../../data/variables.toml");
pub const MAX_BANDS: usize = 3;

/// Closed value interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Band {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Band { lo, hi }
    }
}

impl From<Band> for [f64; 2] {
    fn from(b: Band) -> Self {
        [b.lo, b.hi]
    }
}

impl Band {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableConfig {
    pub id: String,
    #[serde(default = "yes")]
    pub current: bool,
    #[serde(default = "yes")]
    pub summaries: bool,
    #[serde(default = "yes")]
    pub intensity: bool,
    /// Severity levels L1.. in order.
    #[serde(default)]
    pub bands: Vec<Band>,
}

impl VariableConfig {
    pub fn new(id: &str) -> Self {
        VariableConfig { id: id.into(), current: true, summaries: true, intensity: true, bands: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default = "default_short_window")]
    pub short_window_h: u32,
    #[serde(default)]
    pub statics: Vec<String>,
    pub variables: Vec<VariableConfig>,
}

fn default_short_window() -> u32 {
    8
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig::from_toml(DEFAULT_VARIABLES_TOML).expect("shipped variable config is valid")
    }
}

impl FeatureConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: FeatureConfig = toml::from_str(text).map_err(|e| EwsError::Config(format!("variable config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EwsError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.short_window_h == 0 {
            return Err(EwsError::Config("short_window_h must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.variables {
            if !seen.insert(v.id.as_str()) {
                return Err(EwsError::Config(format!("variable {} configured twice", v.id)));
            }
            if v.bands.len() > MAX_BANDS {
                return Err(EwsError::Config(format!("{}: at most {MAX_BANDS} severity bands", v.id)));
            }
            for b in &v.bands {
                if !(b.lo <= b.hi) {
                    return Err(EwsError::Config(format!("{}: band [{}, {}] is empty", v.id, b.lo, b.hi)));
                }
            }
            for pair in v.bands.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                if !(a.hi < b.lo || b.hi < a.lo) {
                    return Err(EwsError::Config(format!("{}: severity bands overlap", v.id)));
                }
            }
        }
        Ok(())
    }

    pub fn short_window(&self) -> Seconds {
        self.short_window_h as Seconds * HOUR
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn variable(&self, id: &str) -> Option<&VariableConfig> {
        self.variables.iter().find(|v| v.id == id)
    }

    /// The same options restricted to `ids` (in config order).
    pub fn restricted(&self, ids: &[&str]) -> FeatureConfig {
        FeatureConfig {
            short_window_h: self.short_window_h,
            statics: self.statics.iter().filter(|s| ids.contains(&s.as_str())).cloned().collect(),
            variables: self.variables.iter().filter(|v| ids.contains(&v.id.as_str())).cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variables;

    #[test]
    fn default_covers_model_variables() {
        let c = FeatureConfig::default();
        assert_eq!(c.variables.len() + c.statics.len(), 25);
        for v in variables::model_variables() {
            assert!(c.variable(v.id).is_some() || c.statics.iter().any(|s| s == v.id), "{}", v.id);
        }
        assert_eq!(c.variable("spo2").unwrap().bands, vec![Band { lo: 90.0, hi: 94.0 }]);
        assert!(!c.variable("fio2_estimate").unwrap().intensity);
        let banded = c.variables.iter().filter(|v| !v.bands.is_empty()).count();
        assert_eq!(banded, 4);
    }

    #[test]
    fn rejects_bad_bands() {
        let overlap = "[[variables]]\nid = \"spo2\"\nbands = [[90.0, 94.0], [93.0, 95.0]]\n";
        assert!(FeatureConfig::from_toml(overlap).is_err());
        let many = "[[variables]]\nid = \"spo2\"\nbands = [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]\n";
        assert!(FeatureConfig::from_toml(many).is_err());
        let dup = "[[variables]]\nid = \"spo2\"\n[[variables]]\nid = \"spo2\"\n";
        assert!(FeatureConfig::from_toml(dup).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = FeatureConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.short_window_h = 4;
        assert_ne!(a.hash(), b.hash());
    }
}
