//! Split-gain and permutation feature importance.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_loss_margin, BoostedEnsemble};
use crate::features::FeatureMatrix;
use crate::rng::stream_rng;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub score: f64,
}

fn ranked(names: &[String], scores: Vec<f64>) -> Vec<ImportanceEntry> {
    let mut out: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.into_iter().map(|(j, score)| ImportanceEntry { feature: names[j].clone(), score }).collect()
}

/// Total split gain per feature over the active trees, descending.
pub fn gain_importance(model: &BoostedEnsemble) -> Vec<ImportanceEntry> {
    let mut scores = vec![0.0; model.feature_names.len()];
    for t in model.active_trees() {
        for (f, g) in t.splits() {
            scores[f] += g;
        }
    }
    ranked(&model.feature_names, scores)
}

fn mean_loss(model: &BoostedEnsemble, matrix: &FeatureMatrix, replace: Option<(usize, &[f64])>) -> f64 {
    let mut row = vec![0.0; matrix.n_cols()];
    let mut total = 0.0;
    for i in 0..matrix.n_rows() {
        row.copy_from_slice(matrix.row(i));
        if let Some((j, col)) = replace {
            row[j] = col[i];
        }
        total += log_loss_margin(model.margin(&row), matrix.labels[i]);
    }
    total / matrix.n_rows().max(1) as f64
}

/// Mean increase of validation log-loss when one column is shuffled, over
/// `repeats` seeded permutations. Features never split on score exactly 0.
pub fn permutation_importance(model: &BoostedEnsemble, valid: &FeatureMatrix, repeats: usize, seed: u64) -> Result<Vec<ImportanceEntry>> {
    model.check_schema(valid)?;
    let base = mean_loss(model, valid, None);
    let mut used = vec![false; model.feature_names.len()];
    for t in model.active_trees() {
        for (f, _) in t.splits() {
            used[f] = true;
        }
    }
    let scores = (0..model.feature_names.len())
        .into_par_iter()
        .map(|j| {
            if !used[j] || repeats == 0 {
                return 0.0;
            }
            let mut rng = stream_rng(seed, "permutation", j as u64);
            let mut col = valid.column(j);
            (0..repeats)
                .map(|_| {
                    col.shuffle(&mut rng);
                    mean_loss(model, valid, Some((j, &col))) - base
                })
                .sum::<f64>()
                / repeats as f64
        })
        .collect();
    Ok(ranked(&model.feature_names, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::{sigmoid, train_gbdt, GbdtParams};
    use rand::Rng;

    fn planted(seed: u64, dup: bool) -> FeatureMatrix {
        let names: Vec<String> = if dup { vec!["a", "signal", "signal_copy"] } else { vec!["a", "signal", "b"] }.into_iter().map(String::from).collect();
        let mut m = FeatureMatrix::empty(names);
        let mut rng = stream_rng(seed, "planted", 0);
        for i in 0..1500 {
            let x: f64 = rng.random_range(-3.0..3.0);
            let other = if dup { x } else { rng.random_range(-3.0..3.0) };
            m.push_row("s", i, rng.random_bool(sigmoid(2.0 * x)), &[rng.random_range(-3.0..3.0), x, other]);
        }
        m
    }

    fn params() -> GbdtParams {
        GbdtParams { max_trees: 60, learning_rate: 0.2, max_leaves: 8, min_child_samples: 20, patience: 0, ..Default::default() }
    }

    #[test]
    fn planted_signal_ranks_first() {
        let train = planted(1, false);
        let valid = planted(2, false);
        let model = train_gbdt(&train, &valid, &params()).unwrap();
        assert_eq!(gain_importance(&model)[0].feature, "signal");
        let p = permutation_importance(&model, &valid, 3, 7).unwrap();
        assert_eq!(p[0].feature, "signal");
        assert_eq!(p, permutation_importance(&model, &valid, 3, 7).unwrap());
    }

    #[test]
    fn unused_feature_has_zero_gain() {
        let mut m = planted(3, false);
        let j = m.column_index("b").unwrap();
        for i in 0..m.n_rows() {
            let w = m.n_cols();
            m.values[i * w + j] = 1.0;
        }
        let model = train_gbdt(&m, &m, &params()).unwrap();
        let g = gain_importance(&model);
        assert_eq!(g.iter().find(|e| e.feature == "b").unwrap().score, 0.0);
    }

    #[test]
    fn duplicated_pair_survey() {
        let train = planted(4, true);
        let valid = planted(5, true);
        let model = train_gbdt(&train, &valid, &params()).unwrap();
        let p = permutation_importance(&model, &valid, 3, 1).unwrap();
        let get = |n: &str| p.iter().find(|e| e.feature == n).unwrap().score;
        let (a, b) = (get("signal"), get("signal_copy"));
        println!("duplicated pair importance: {a:.4} + {b:.4}; pair sum >= each alone: {}", a + b >= a.max(b));
    }
}
