use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;
use crate::{EwsError, Result};

/// A partition of stay ids into train / validation / test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub split_id: usize,
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl CohortSplit {
    pub fn subset_of(&self, stay_id: &str) -> Option<&'static str> {
        if self.train.contains(stay_id) {
            Some("train")
        } else if self.validation.contains(stay_id) {
            Some("validation")
        } else if self.test.contains(stay_id) {
            Some("test")
        } else {
            None
        }
    }
}

/// Random partitions by stay. Train and validation sizes are the rounded
/// fractions of the cohort; test takes the rest.
pub fn make_splits(
    stay_ids: &[String],
    n_splits: usize,
    train_frac: f64,
    valid_frac: f64,
    seed: u64,
) -> Result<Vec<CohortSplit>> {
    if !(train_frac > 0.0 && train_frac < 1.0 && valid_frac > 0.0 && valid_frac < 1.0) {
        return Err(EwsError::Config("split fractions must lie in (0, 1)".into()));
    }
    if train_frac + valid_frac >= 1.0 {
        return Err(EwsError::Config("train and validation fractions must sum to less than 1".into()));
    }
    let mut ids: Vec<String> = stay_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 3 {
        return Err(EwsError::Empty(format!("need at least 3 stays to split, got {}", ids.len())));
    }
    let n = ids.len();
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - 2);
    let n_valid = ((n as f64 * valid_frac).round() as usize).clamp(1, n - n_train - 1);

    Ok((0..n_splits)
        .map(|split_id| {
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut stream_rng(seed, "split", split_id as u64));
            let (train, rest) = shuffled.split_at(n_train);
            let (validation, test) = rest.split_at(n_valid);
            CohortSplit {
                split_id,
                train: train.iter().cloned().collect(),
                validation: validation.iter().cloned().collect(),
                test: test.iter().cloned().collect(),
            }
        })
        .collect())
}
