//! Second-order boosting on binary log-loss with leaf-wise tree growth.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Tree, TreeNode};
use super::{log_loss_margin, sigmoid, BoostedEnsemble, TrainingHistory};
use crate::features::FeatureMatrix;
use crate::metrics::average_precision;
use crate::rng::stream_rng;
use crate::{EwsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitMethod {
    /// Sorted scan over every distinct value.
    Exact,
    /// Quantile bins per feature (at most 255), histogram subtraction.
    Histogram { max_bins: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingMetric {
    #[default]
    LogLoss,
    Auprc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub max_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_child_samples: usize,
    /// Rounds without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub split_method: SplitMethod,
    pub stopping_metric: StoppingMetric,
    /// Fraction of training rows drawn per tree; 1 disables sampling.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            max_trees: 5000,
            learning_rate: 0.05,
            max_leaves: 64,
            min_child_samples: 20,
            patience: 50,
            lambda: 1.0,
            split_method: SplitMethod::Exact,
            stopping_metric: StoppingMetric::LogLoss,
            subsample: 1.0,
            seed: 1,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.max_leaves < 2 || self.min_child_samples < 1 || !(self.lambda >= 0.0) {
            return Err(EwsError::Config("invalid boosting parameters".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(EwsError::Config("subsample must lie in (0, 1]".into()));
        }
        if let SplitMethod::Histogram { max_bins } = self.split_method {
            if !(2..=255).contains(&max_bins) {
                return Err(EwsError::Config("max_bins must lie in [2, 255]".into()));
            }
        }
        Ok(())
    }
}

/// Threshold between two consecutive distinct values `a < b` such that
/// `a <= t < b`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

enum Columns {
    Exact {
        cols: Vec<Vec<f64>>,
        /// Non-missing row indices sorted by value, per feature.
        sorted: Vec<Vec<u32>>,
    },
    Binned {
        /// Bin per row; 0 is missing.
        bins: Vec<Vec<u8>>,
        /// Upper edges of bins 1..n-1 per feature.
        edges: Vec<Vec<f64>>,
    },
}

fn bin_edges(col: &[f64], max_bins: usize) -> Vec<f64> {
    let mut v: Vec<f64> = col.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let mut distinct = v.clone();
    distinct.dedup();
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let mut edges = Vec::with_capacity(max_bins - 1);
    for k in 1..max_bins {
        let x = v[k * v.len() / max_bins];
        // cut after x, at the midpoint to the next distinct value
        let next = distinct.partition_point(|&d| d <= x);
        if next < distinct.len() {
            let e = midpoint(x, distinct[next]);
            if edges.last().is_none_or(|&last| e > last) {
                edges.push(e);
            }
        }
    }
    edges
}

impl Columns {
    fn new(m: &FeatureMatrix, method: SplitMethod) -> Self {
        let cols: Vec<Vec<f64>> = (0..m.n_cols()).into_par_iter().map(|j| m.column(j)).collect();
        match method {
            SplitMethod::Exact => {
                let sorted = cols
                    .par_iter()
                    .map(|c| {
                        let mut idx: Vec<u32> = (0..c.len() as u32).filter(|&i| !c[i as usize].is_nan()).collect();
                        idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]));
                        idx
                    })
                    .collect();
                Columns::Exact { cols, sorted }
            }
            SplitMethod::Histogram { max_bins } => {
                let (bins, edges) = cols
                    .into_par_iter()
                    .map(|c| {
                        let e = bin_edges(&c, max_bins);
                        let b = c
                            .iter()
                            .map(|&x| if x.is_nan() { 0 } else { 1 + e.partition_point(|&edge| edge < x) as u8 })
                            .collect();
                        (b, e)
                    })
                    .unzip();
                Columns::Binned { bins, edges }
            }
        }
    }

    fn n_features(&self) -> usize {
        match self {
            Columns::Exact { cols, .. } => cols.len(),
            Columns::Binned { bins, .. } => bins.len(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    /// Last bin sent left (histogram mode).
    bin: u8,
    default_left: bool,
    gain: f64,
}

impl Candidate {
    /// Higher gain wins; ties go to the lower feature index.
    fn better_than(&self, other: &Option<Candidate>) -> bool {
        match other {
            None => true,
            Some(o) => self.gain > o.gain || (self.gain == o.gain && self.feature < o.feature),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats { g: self.g - o.g, h: self.h - o.h, n: self.n - o.n }
    }

    fn plus(&self, o: &Stats) -> Stats {
        Stats { g: self.g + o.g, h: self.h + o.h, n: self.n + o.n }
    }
}

struct SplitContext<'a> {
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
    min_child: usize,
}

impl SplitContext<'_> {
    fn score(&self, s: &Stats) -> f64 {
        s.g * s.g / (s.h + self.lambda)
    }

    /// Best direction for missing rows given the non-missing left part.
    fn evaluate(&self, left: &Stats, total_present: &Stats, missing: &Stats, parent_score: f64) -> Option<(f64, bool)> {
        let right = total_present.minus(left);
        let gain_of = |l: &Stats, r: &Stats| {
            if l.n < self.min_child || r.n < self.min_child {
                None
            } else {
                Some(0.5 * (self.score(l) + self.score(r) - parent_score))
            }
        };
        if missing.n == 0 {
            let g = gain_of(left, &right)?;
            return Some((g, left.n >= right.n));
        }
        let gl = gain_of(&left.plus(missing), &right);
        let gr = gain_of(left, &right.plus(missing));
        match (gl, gr) {
            (Some(a), Some(b)) => Some(if a >= b { (a, true) } else { (b, false) }),
            (Some(a), None) => Some((a, true)),
            (None, Some(b)) => Some((b, false)),
            (None, None) => None,
        }
    }

    /// Scan of (value, g, h) triples sorted by value.
    fn scan_sorted(&self, feature: usize, present: &[(f64, f64, f64)], missing: &Stats, parent_score: f64) -> Option<Candidate> {
        let mut total = Stats::default();
        for &(_, g, h) in present {
            total.add(g, h);
        }
        let mut left = Stats::default();
        let mut best: Option<Candidate> = None;
        for k in 0..present.len().saturating_sub(1) {
            left.add(present[k].1, present[k].2);
            let (a, b) = (present[k].0, present[k + 1].0);
            if a == b {
                continue;
            }
            if let Some((gain, default_left)) = self.evaluate(&left, &total, missing, parent_score) {
                if gain > 0.0 && best.is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate { feature, threshold: midpoint(a, b), bin: 0, default_left, gain });
                }
            }
        }
        best
    }
}

struct Histogram {
    /// Per feature, per bin.
    bins: Vec<Vec<Stats>>,
}

impl Histogram {
    fn build(bins: &[Vec<u8>], edges: &[Vec<f64>], rows: &[u32], grad: &[f64], hess: &[f64]) -> Self {
        let per = bins
            .par_iter()
            .zip(edges)
            .map(|(col, e)| {
                let mut h = vec![Stats::default(); e.len() + 2];
                for &r in rows {
                    let r = r as usize;
                    h[col[r] as usize].add(grad[r], hess[r]);
                }
                h
            })
            .collect();
        Histogram { bins: per }
    }

    fn minus(&self, other: &Histogram) -> Histogram {
        Histogram {
            bins: self.bins.iter().zip(&other.bins).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.minus(y)).collect()).collect(),
        }
    }
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    stats: Stats,
    best: Option<Candidate>,
    hist: Option<Histogram>,
}

struct Grower<'a> {
    data: &'a Columns,
    ctx: SplitContext<'a>,
    /// Leaf id owning each row (exact mode, large nodes).
    owner: Vec<u32>,
}

impl<'a> Grower<'a> {
    fn find_split(&self, leaf: &Leaf, leaf_id: u32) -> Option<Candidate> {
        let parent_score = self.ctx.score(&leaf.stats);
        let n_features = self.data.n_features();
        let per_feature: Vec<Option<Candidate>> = match self.data {
            Columns::Exact { cols, sorted } => (0..n_features)
                .into_par_iter()
                .map(|f| {
                    let col = &cols[f];
                    let mut missing = Stats::default();
                    let mut present: Vec<(f64, f64, f64)> = Vec::with_capacity(leaf.rows.len());
                    if leaf.rows.len() * 8 < sorted[f].len() {
                        for &r in &leaf.rows {
                            let r = r as usize;
                            if col[r].is_nan() {
                                missing.add(self.ctx.grad[r], self.ctx.hess[r]);
                            } else {
                                present.push((col[r], self.ctx.grad[r], self.ctx.hess[r]));
                            }
                        }
                        present.sort_by(|a, b| a.0.total_cmp(&b.0));
                    } else {
                        for &r in &sorted[f] {
                            let r = r as usize;
                            if self.owner[r] == leaf_id {
                                present.push((col[r], self.ctx.grad[r], self.ctx.hess[r]));
                            }
                        }
                        for &r in &leaf.rows {
                            let r = r as usize;
                            if col[r].is_nan() {
                                missing.add(self.ctx.grad[r], self.ctx.hess[r]);
                            }
                        }
                    }
                    self.ctx.scan_sorted(f, &present, &missing, parent_score)
                })
                .collect(),
            Columns::Binned { edges, .. } => {
                let hist = leaf.hist.as_ref().expect("histogram built for binned leaves");
                (0..n_features)
                    .into_par_iter()
                    .map(|f| {
                        let h = &hist.bins[f];
                        let missing = h[0];
                        let mut total = Stats::default();
                        for s in &h[1..] {
                            total = total.plus(s);
                        }
                        let mut left = Stats::default();
                        let mut best: Option<Candidate> = None;
                        for b in 1..h.len() - 1 {
                            left = left.plus(&h[b]);
                            if h[b].n == 0 || left.n == total.n {
                                continue;
                            }
                            if let Some((gain, default_left)) = self.ctx.evaluate(&left, &total, &missing, parent_score) {
                                if gain > 0.0 && best.is_none_or(|c| gain > c.gain) {
                                    best = Some(Candidate { feature: f, threshold: edges[f][b - 1], bin: b as u8, default_left, gain });
                                }
                            }
                        }
                        best
                    })
                    .collect()
            }
        };
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if c.better_than(&best) {
                best = Some(c);
            }
        }
        best
    }

    fn goes_left(&self, c: &Candidate, r: usize) -> bool {
        match self.data {
            Columns::Exact { cols, .. } => {
                let x = cols[c.feature][r];
                if x.is_nan() {
                    c.default_left
                } else {
                    x <= c.threshold
                }
            }
            Columns::Binned { bins, .. } => {
                let b = bins[c.feature][r];
                if b == 0 {
                    c.default_left
                } else {
                    b <= c.bin
                }
            }
        }
    }

    fn stats(&self, rows: &[u32]) -> Stats {
        let mut s = Stats::default();
        for &r in rows {
            s.add(self.ctx.grad[r as usize], self.ctx.hess[r as usize]);
        }
        s
    }

    fn make_leaf(&self, node: usize, rows: Vec<u32>, hist: Option<Histogram>) -> Leaf {
        let stats = self.stats(&rows);
        Leaf { node, rows, stats, best: None, hist }
    }

    /// Grows one tree; returns it with the rows of each leaf (by node index).
    fn grow(&mut self, rows: Vec<u32>, max_leaves: usize) -> (Tree, Vec<(usize, Vec<u32>)>) {
        let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
        let root_hist = match self.data {
            Columns::Binned { bins, edges } => Some(Histogram::build(bins, edges, &rows, self.ctx.grad, self.ctx.hess)),
            Columns::Exact { .. } => None,
        };
        self.owner.fill(u32::MAX);
        for &r in &rows {
            self.owner[r as usize] = 0;
        }
        let mut leaves = vec![self.make_leaf(0, rows, root_hist)];
        leaves[0].best = self.find_split(&leaves[0], 0);
        while leaves.len() < max_leaves {
            // highest gain, ties to the earliest created leaf
            let mut pick: Option<usize> = None;
            for (k, l) in leaves.iter().enumerate() {
                if let Some(c) = l.best {
                    if pick.is_none_or(|p| c.gain > leaves[p].best.unwrap().gain) {
                        pick = Some(k);
                    }
                }
            }
            let Some(k) = pick else { break };
            let leaf = leaves.swap_remove(k);
            let c = leaf.best.expect("picked leaves have a split");
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|&&r| self.goes_left(&c, r as usize));
            let (l_node, r_node) = (nodes.len(), nodes.len() + 1);
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes[leaf.node] = TreeNode::Split {
                feature: c.feature,
                threshold: c.threshold,
                default_left: c.default_left,
                gain: c.gain,
                left: l_node,
                right: r_node,
            };
            let (l_hist, r_hist) = match (self.data, leaf.hist) {
                (Columns::Binned { bins, edges }, Some(parent)) => {
                    if left_rows.len() <= right_rows.len() {
                        let small = Histogram::build(bins, edges, &left_rows, self.ctx.grad, self.ctx.hess);
                        let other = parent.minus(&small);
                        (Some(small), Some(other))
                    } else {
                        let small = Histogram::build(bins, edges, &right_rows, self.ctx.grad, self.ctx.hess);
                        let other = parent.minus(&small);
                        (Some(other), Some(small))
                    }
                }
                _ => (None, None),
            };
            for &r in &left_rows {
                self.owner[r as usize] = l_node as u32;
            }
            for &r in &right_rows {
                self.owner[r as usize] = r_node as u32;
            }
            let mut l = self.make_leaf(l_node, left_rows, l_hist);
            let mut r = self.make_leaf(r_node, right_rows, r_hist);
            l.best = self.find_split(&l, l_node as u32);
            r.best = self.find_split(&r, r_node as u32);
            leaves.push(l);
            leaves.push(r);
            // keep creation order for tie-breaking
            leaves.sort_by_key(|l| l.node);
        }
        let leaf_rows = leaves.into_iter().map(|l| (l.node, l.rows)).collect();
        (Tree { nodes }, leaf_rows)
    }
}

fn check_binary(m: &FeatureMatrix, what: &str) -> Result<()> {
    let pos = m.labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == m.n_rows() {
        return Err(EwsError::SingleClass(format!("{what} labels: {pos} positive of {}", m.n_rows())));
    }
    Ok(())
}

pub(crate) fn mean_log_loss(margins: &[f64], labels: &[bool]) -> f64 {
    margins.iter().zip(labels).map(|(&m, &y)| log_loss_margin(m, y)).sum::<f64>() / margins.len().max(1) as f64
}

fn stopping_value(metric: StoppingMetric, margins: &[f64], labels: &[bool]) -> f64 {
    match metric {
        StoppingMetric::LogLoss => mean_log_loss(margins, labels),
        StoppingMetric::Auprc => -average_precision(margins, labels).unwrap_or(0.0),
    }
}

/// Boosted ensemble on `train`, early-stopped on `valid` (if it has rows).
pub fn train_gbdt(train: &FeatureMatrix, valid: &FeatureMatrix, params: &GbdtParams) -> Result<BoostedEnsemble> {
    params.validate()?;
    check_binary(train, "training")?;
    if valid.n_rows() > 0 && valid.columns != train.columns {
        return Err(EwsError::SchemaMismatch("training and validation columns differ".into()));
    }
    let n = train.n_rows();
    let y: Vec<f64> = train.labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let p0 = (y.iter().sum::<f64>() / n as f64).clamp(1e-12, 1.0 - 1e-12);
    let base_score = (p0 / (1.0 - p0)).ln();
    let data = Columns::new(train, params.split_method);
    let mut margin = vec![base_score; n];
    let mut valid_margin = vec![base_score; valid.n_rows()];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = stream_rng(params.seed, "gbdt-rows", 0);

    let has_valid = valid.n_rows() > 0;
    let mut history = TrainingHistory {
        train_loss: vec![mean_log_loss(&margin, &train.labels)],
        valid_metric: if has_valid { vec![stopping_value(params.stopping_metric, &valid_margin, &valid.labels)] } else { vec![] },
    };
    let mut best = (history.valid_metric.first().copied().unwrap_or(f64::INFINITY), 0usize);
    let mut trees: Vec<Tree> = Vec::new();
    let mut owner = vec![0u32; n];

    for round in 1..=params.max_trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = p - y[i];
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let rows: Vec<u32> = if params.subsample < 1.0 {
            let k = ((n as f64 * params.subsample).round() as usize).max(1);
            let mut idx: Vec<u32> = sample(&mut rng, n, k).into_iter().map(|i| i as u32).collect();
            idx.sort_unstable();
            idx
        } else {
            (0..n as u32).collect()
        };
        let mut grower = Grower {
            data: &data,
            ctx: SplitContext { grad: &grad, hess: &hess, lambda: params.lambda, min_child: params.min_child_samples },
            owner: std::mem::take(&mut owner),
        };
        let (mut tree, leaf_rows) = grower.grow(rows, params.max_leaves);
        owner = grower.owner;
        for (node, rows) in &leaf_rows {
            let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + grad[r as usize], h + hess[r as usize]));
            let mut step = -params.learning_rate * g / (h + params.lambda);
            // halve until the leaf's own loss does not increase
            let loss = |d: f64| rows.iter().map(|&r| log_loss_margin(margin[r as usize] + d, train.labels[r as usize])).sum::<f64>();
            let before = loss(0.0);
            let mut tries = 0;
            while step != 0.0 && loss(step) > before {
                step *= 0.5;
                tries += 1;
                if tries > 60 {
                    step = 0.0;
                }
            }
            tree.nodes[*node] = TreeNode::Leaf { value: step };
        }
        for (i, m) in margin.iter_mut().enumerate() {
            *m += tree.predict(train.row(i));
        }
        for (i, vm) in valid_margin.iter_mut().enumerate() {
            *vm += tree.predict(valid.row(i));
        }
        trees.push(tree.into_preorder());
        history.train_loss.push(mean_log_loss(&margin, &train.labels));
        if has_valid {
            let v = stopping_value(params.stopping_metric, &valid_margin, &valid.labels);
            history.valid_metric.push(v);
            if v < best.0 {
                best = (v, round);
            }
            if params.patience > 0 && round - best.1 >= params.patience {
                break;
            }
        }
        // a leaf-only tree with no step means every later round is identical
        if params.subsample >= 1.0 && matches!(trees.last().unwrap().nodes[..], [TreeNode::Leaf { value }] if value.abs() < 1e-12) {
            break;
        }
    }
    let best_iteration = if has_valid { best.1 } else { trees.len() };
    Ok(BoostedEnsemble::new(train.columns.clone(), base_score, params.clone(), trees, best_iteration, history))
}
