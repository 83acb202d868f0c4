//! Clinical baselines: an SpO2 threshold rule and a small two-feature tree.

use serde::{Deserialize, Serialize};

use super::train::midpoint;
use super::tree::{Tree, TreeNode};
use crate::features::FeatureMatrix;
use crate::{EwsError, Result};

/// Current SpO2 and current FiO2 estimate.
pub const BASELINE_C_FEATURES: [&str; 2] = ["spo2__current", "fio2_estimate__current"];

/// 1 when SpO2 (percent) is below `threshold`, 0 otherwise or when missing.
pub fn baseline_s(spo2: f64, threshold: f64) -> f64 {
    if !spo2.is_nan() && spo2 < threshold {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineCParams {
    pub max_leaves: usize,
    pub min_child_samples: usize,
}

impl Default for BaselineCParams {
    fn default() -> Self {
        BaselineCParams { max_leaves: 32, min_child_samples: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTreeBaseline {
    pub feature_names: Vec<String>,
    /// Leaf values are Laplace-smoothed positive fractions.
    pub tree: Tree,
}

impl SingleTreeBaseline {
    pub fn predict_scores(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        let idx: Vec<usize> = self
            .feature_names
            .iter()
            .map(|n| matrix.column_index(n).ok_or_else(|| EwsError::SchemaMismatch(format!("missing column {n}"))))
            .collect::<Result<_>>()?;
        Ok((0..matrix.n_rows())
            .map(|i| {
                let row: Vec<f64> = idx.iter().map(|&j| matrix.get(i, j)).collect();
                self.tree.predict(&row)
            })
            .collect())
    }

    pub fn leaf_assignments(&self, rows: &[Vec<f64>]) -> Vec<usize> {
        rows.iter().map(|r| self.tree.leaf_index(r)).collect()
    }
}

fn entropy_sum(pos: f64, n: f64) -> f64 {
    // n * H(pos / n)
    let term = |k: f64| if k > 0.0 { -k * (k / n).ln() } else { 0.0 };
    if n == 0.0 {
        0.0
    } else {
        term(pos) + term(n - pos)
    }
}

#[derive(Clone, Copy)]
struct Cand {
    feature: usize,
    threshold: f64,
    default_left: bool,
    gain: f64,
}

fn best_split(cols: &[Vec<f64>], y: &[bool], rows: &[usize], min_child: usize) -> Option<Cand> {
    let n = rows.len() as f64;
    let pos_total = rows.iter().filter(|&&r| y[r]).count() as f64;
    let parent = entropy_sum(pos_total, n);
    let mut best: Option<Cand> = None;
    for (f, col) in cols.iter().enumerate() {
        let mut present: Vec<(f64, bool)> = rows.iter().filter(|&&r| !col[r].is_nan()).map(|&r| (col[r], y[r])).collect();
        present.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mn, mp) = {
            let miss: Vec<usize> = rows.iter().copied().filter(|&r| col[r].is_nan()).collect();
            (miss.len() as f64, miss.iter().filter(|&&r| y[r]).count() as f64)
        };
        let (np, pp) = (present.len() as f64, present.iter().filter(|p| p.1).count() as f64);
        let (mut ln, mut lp) = (0.0, 0.0);
        for k in 0..present.len().saturating_sub(1) {
            ln += 1.0;
            lp += f64::from(u8::from(present[k].1));
            let (a, b) = (present[k].0, present[k + 1].0);
            if a == b {
                continue;
            }
            let (rn, rp) = (np - ln, pp - lp);
            let gain = |ln: f64, lp: f64, rn: f64, rp: f64| {
                if (ln as usize) < min_child || (rn as usize) < min_child {
                    None
                } else {
                    Some(parent - entropy_sum(lp, ln) - entropy_sum(rp, rn))
                }
            };
            let choice = if mn == 0.0 {
                gain(ln, lp, rn, rp).map(|g| (g, ln >= rn))
            } else {
                match (gain(ln + mn, lp + mp, rn, rp), gain(ln, lp, rn + mn, rp + mp)) {
                    (Some(a), Some(b)) => Some(if a >= b { (a, true) } else { (b, false) }),
                    (Some(a), None) => Some((a, true)),
                    (None, Some(b)) => Some((b, false)),
                    (None, None) => None,
                }
            };
            if let Some((g, default_left)) = choice {
                if g > 1e-12 * n && best.is_none_or(|c| g > c.gain) {
                    best = Some(Cand { feature: f, threshold: midpoint(a, b), default_left, gain: g });
                }
            }
        }
    }
    best
}

/// Best-first tree over exactly the two baseline features, grown by
/// log-loss (entropy) reduction up to `max_leaves` leaves.
pub fn train_baseline_c(matrix: &FeatureMatrix, params: &BaselineCParams) -> Result<SingleTreeBaseline> {
    if params.max_leaves < 1 || params.min_child_samples < 1 {
        return Err(EwsError::Config("baseline tree needs max_leaves >= 1 and min_child_samples >= 1".into()));
    }
    let idx: Vec<usize> = BASELINE_C_FEATURES
        .iter()
        .map(|n| matrix.column_index(n).ok_or_else(|| EwsError::SchemaMismatch(format!("missing column {n}"))))
        .collect::<Result<_>>()?;
    let pos = matrix.labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == matrix.n_rows() {
        return Err(EwsError::SingleClass(format!("baseline labels: {pos} positive of {}", matrix.n_rows())));
    }
    let cols: Vec<Vec<f64>> = idx.iter().map(|&j| matrix.column(j)).collect();
    Ok(SingleTreeBaseline {
        feature_names: BASELINE_C_FEATURES.iter().map(|s| s.to_string()).collect(),
        tree: grow_class_tree(&cols, &matrix.labels, params),
    })
}

pub(crate) fn grow_class_tree(cols: &[Vec<f64>], y: &[bool], params: &BaselineCParams) -> Tree {
    let leaf_value = |rows: &[usize]| {
        let p = rows.iter().filter(|&&r| y[r]).count() as f64;
        (p + 1.0) / (rows.len() as f64 + 2.0)
    };
    let all: Vec<usize> = (0..y.len()).collect();
    let mut nodes = vec![TreeNode::Leaf { value: leaf_value(&all) }];
    let mut leaves: Vec<(usize, Vec<usize>, Option<Cand>)> = vec![(0, all.clone(), best_split(cols, y, &all, params.min_child_samples))];
    while leaves.len() < params.max_leaves {
        let mut pick: Option<usize> = None;
        for (k, l) in leaves.iter().enumerate() {
            if let Some(c) = l.2 {
                if pick.is_none_or(|p| c.gain > leaves[p].2.unwrap().gain) {
                    pick = Some(k);
                }
            }
        }
        let Some(k) = pick else { break };
        let (node, rows, c) = leaves.remove(k);
        let c = c.expect("picked");
        let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| {
            let x = cols[c.feature][r];
            if x.is_nan() {
                c.default_left
            } else {
                x <= c.threshold
            }
        });
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(TreeNode::Leaf { value: leaf_value(&l_rows) });
        nodes.push(TreeNode::Leaf { value: leaf_value(&r_rows) });
        nodes[node] = TreeNode::Split { feature: c.feature, threshold: c.threshold, default_left: c.default_left, gain: c.gain, left: l, right: r };
        let lb = best_split(cols, y, &l_rows, params.min_child_samples);
        let rb = best_split(cols, y, &r_rows, params.min_child_samples);
        leaves.push((l, l_rows, lb));
        leaves.push((r, r_rows, rb));
        leaves.sort_by_key(|l| l.0);
    }
    Tree { nodes }.into_preorder()
}
