//! Boosted decision-tree score model and the two clinical baselines.

pub mod baseline;
pub mod importance;
pub mod train;
pub mod tree;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use baseline::{baseline_s, train_baseline_c, BaselineCParams, SingleTreeBaseline, BASELINE_C_FEATURES};
pub use importance::{gain_importance, permutation_importance, ImportanceEntry};
pub use train::{train_gbdt, GbdtParams, SplitMethod, StoppingMetric};
pub use tree::{Tree, TreeNode};

use crate::features::FeatureMatrix;
use crate::{EwsError, Result};

pub const GBDT_FORMAT_VERSION: u32 = 1;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary log-loss of a raw margin.
pub fn log_loss_margin(margin: f64, label: bool) -> f64 {
    let softplus = margin.max(0.0) + (-margin.abs()).exp().ln_1p();
    if label {
        softplus - margin
    } else {
        softplus
    }
}

pub fn schema_hash(columns: &[String]) -> String {
    let mut h = Sha256::new();
    for c in columns {
        h.update(c.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Per-round training log-loss and validation stopping metric, index 0 being
/// the base score alone. The stopping metric is log-loss or negated AUPRC.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub valid_metric: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub schema_hash: String,
    pub params: GbdtParams,
    pub base_score: f64,
    pub learning_rate: f64,
    /// Number of leading trees used for prediction.
    pub best_iteration: usize,
    pub trees: Vec<Tree>,
    pub history: TrainingHistory,
}

impl BoostedEnsemble {
    pub fn new(
        feature_names: Vec<String>,
        base_score: f64,
        params: GbdtParams,
        trees: Vec<Tree>,
        best_iteration: usize,
        history: TrainingHistory,
    ) -> Self {
        BoostedEnsemble {
            format_version: GBDT_FORMAT_VERSION,
            schema_hash: schema_hash(&feature_names),
            feature_names,
            learning_rate: params.learning_rate,
            params,
            base_score,
            best_iteration,
            trees,
            history,
        }
    }

    pub fn active_trees(&self) -> &[Tree] {
        &self.trees[..self.best_iteration.min(self.trees.len())]
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.active_trees().iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }

    pub fn check_schema(&self, matrix: &FeatureMatrix) -> Result<()> {
        if matrix.columns != self.feature_names {
            return Err(EwsError::SchemaMismatch(format!(
                "model expects {} features (schema {}), matrix has {}",
                self.feature_names.len(),
                &self.schema_hash[..12],
                matrix.n_cols()
            )));
        }
        Ok(())
    }

    /// Scores in [0, 1] through `best_iteration` trees.
    pub fn predict_scores(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_schema(matrix)?;
        Ok((0..matrix.n_rows()).map(|i| self.predict_row(matrix.row(i))).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != GBDT_FORMAT_VERSION {
            return Err(EwsError::Config(format!("unsupported model format {}", self.format_version)));
        }
        if self.best_iteration > self.trees.len() {
            return Err(EwsError::Config("best_iteration exceeds tree count".into()));
        }
        if self.schema_hash != schema_hash(&self.feature_names) {
            return Err(EwsError::SchemaMismatch("schema hash does not match feature names".into()));
        }
        if self.trees.iter().filter_map(Tree::max_feature).any(|f| f >= self.feature_names.len()) {
            return Err(EwsError::SchemaMismatch("split on a feature outside the schema".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: BoostedEnsemble = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}
