//! Binary decision trees with missing-value default directions.

use serde::{Deserialize, Serialize};

use crate::{EwsError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go left; missing values follow
    /// `default_left`.
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        gain: f64,
        left: usize,
        right: usize,
    },
}

/// Flat tree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NestedNode", try_from = "NestedNode")]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree { nodes: vec![TreeNode::Leaf { value }] }
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split { feature, threshold, default_left, left, right, .. } => {
                    let x = row[feature];
                    let go_left = if x.is_nan() { default_left } else { x <= threshold };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { value } => value,
            TreeNode::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .max()
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, gain, .. } => Some((*feature, *gain)),
            TreeNode::Leaf { .. } => None,
        })
    }

    /// Same tree with nodes renumbered in depth-first order, the layout
    /// produced by deserialization.
    pub fn into_preorder(self) -> Tree {
        Tree::try_from(NestedNode::from(self)).expect("tree values already finite")
    }

    pub fn leaf_values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.nodes.iter_mut().filter_map(|n| match n {
            TreeNode::Leaf { value } => Some(value),
            TreeNode::Split { .. } => None,
        })
    }
}

/// Nested serialized form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NestedNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        gain: f64,
        left: Box<NestedNode>,
        right: Box<NestedNode>,
    },
}

impl From<Tree> for NestedNode {
    fn from(tree: Tree) -> Self {
        fn build(nodes: &[TreeNode], i: usize) -> NestedNode {
            match nodes[i] {
                TreeNode::Leaf { value } => NestedNode::Leaf { value },
                TreeNode::Split { feature, threshold, default_left, gain, left, right } => NestedNode::Split {
                    feature,
                    threshold,
                    default_left,
                    gain,
                    left: Box::new(build(nodes, left)),
                    right: Box::new(build(nodes, right)),
                },
            }
        }
        build(&tree.nodes, 0)
    }
}

impl TryFrom<NestedNode> for Tree {
    type Error = EwsError;

    fn try_from(root: NestedNode) -> Result<Self> {
        fn push(node: NestedNode, nodes: &mut Vec<TreeNode>) -> Result<usize> {
            let i = nodes.len();
            match node {
                NestedNode::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(EwsError::Config("non-finite leaf value".into()));
                    }
                    nodes.push(TreeNode::Leaf { value });
                }
                NestedNode::Split { feature, threshold, default_left, gain, left, right } => {
                    if !threshold.is_finite() {
                        return Err(EwsError::Config("non-finite split threshold".into()));
                    }
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    let l = push(*left, nodes)?;
                    let r = push(*right, nodes)?;
                    nodes[i] = TreeNode::Split { feature, threshold, default_left, gain, left: l, right: r };
                }
            }
            Ok(i)
        }
        let mut nodes = Vec::new();
        push(root, &mut nodes)?;
        Ok(Tree { nodes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump(default_left: bool) -> Tree {
        Tree {
            nodes: vec![
                TreeNode::Split { feature: 1, threshold: 0.5, default_left, gain: 2.0, left: 1, right: 2 },
                TreeNode::Leaf { value: -1.0 },
                TreeNode::Leaf { value: 1.0 },
            ],
        }
    }

    #[test]
    fn routing() {
        let t = stump(true);
        assert_eq!(t.predict(&[9.0, 0.5]), -1.0);
        assert_eq!(t.predict(&[9.0, 0.6]), 1.0);
        assert_eq!(t.predict(&[9.0, f64::NAN]), -1.0);
        assert_eq!(stump(false).predict(&[9.0, f64::NAN]), 1.0);
        assert_eq!(t.n_leaves(), 2);
    }

    #[test]
    fn nested_json_round_trip() {
        let t = stump(false);
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.starts_with("{\"split\""));
        let back: Tree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
