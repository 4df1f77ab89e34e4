//! CART regression trees.
//!
//! One builder serves the standalone tree, the random forest (per-split
//! feature subsampling) and gradient boosting (best-first growth bounded by
//! a leaf count). Ties between equally good splits resolve to the lowest
//! feature index, then the lowest threshold.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::linalg::Matrix;
use crate::metrics::{Prediction, Regressor};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    SquaredError,
    AbsoluteError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub criterion: Criterion,
}

impl Default for TreeConfig {
    /// Tuned decision-tree settings for the DFT data.
    fn default() -> Self {
        TreeConfig {
            max_depth: Some(20),
            min_samples_leaf: 5,
            criterion: Criterion::AbsoluteError,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == Some(0) {
            return Err(Error::Config("tree max_depth must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("tree min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

/// Internal growth limits shared by all tree-based families.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Growth {
    pub max_depth: Option<usize>,
    pub max_leaf_nodes: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: Option<usize>,
    pub criterion: Criterion,
}

impl From<&TreeConfig> for Growth {
    fn from(c: &TreeConfig) -> Self {
        Growth {
            max_depth: c.max_depth,
            max_leaf_nodes: None,
            min_samples_leaf: c.min_samples_leaf,
            max_features: None,
            criterion: c.criterion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub(crate) fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.n_features {
            return Err(Error::LengthMismatch {
                left: x.cols(),
                right: self.n_features,
            });
        }
        Ok(())
    }
}

impl Regressor for RegressionTree {
    fn predict(&self, x: &Matrix) -> Result<Prediction> {
        self.check_width(x)?;
        Prediction::new((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }
}

pub fn fit_tree(train: &DesignMatrix, cfg: &TreeConfig) -> Result<RegressionTree> {
    cfg.validate()?;
    if train.n_rows() == 0 {
        return Err(Error::Empty("tree training set"));
    }
    let idx: Vec<usize> = (0..train.n_rows()).collect();
    Ok(grow(train.features(), train.targets(), idx, &Growth::from(cfg), None))
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

/// Grows one tree on the rows `idx` (duplicates allowed, as in bootstrap
/// samples). `rng` is only consulted for per-split feature subsampling.
pub(crate) fn grow(x: &Matrix, y: &[f64], idx: Vec<usize>, g: &Growth, mut rng: Option<&mut Rng>) -> RegressionTree {
    let mut builder = Builder {
        x,
        y,
        g,
        nodes: Vec::new(),
    };
    match g.max_leaf_nodes {
        Some(max_leaves) => builder.grow_best_first(idx, max_leaves.max(1), &mut rng),
        None => {
            builder.grow_depth_first(idx, 0, &mut rng);
        }
    }
    RegressionTree {
        nodes: builder.nodes,
        n_features: x.cols(),
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    g: &'a Growth,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let mut v: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        match self.g.criterion {
            Criterion::SquaredError => v.iter().sum::<f64>() / v.len() as f64,
            Criterion::AbsoluteError => median(&mut v),
        }
    }

    fn can_split(&self, idx: &[usize], depth: usize) -> bool {
        if self.g.max_depth.is_some_and(|d| depth >= d) {
            return false;
        }
        if idx.len() < 2 * self.g.min_samples_leaf || idx.len() < 2 {
            return false;
        }
        let first = self.y[idx[0]];
        idx.iter().any(|&i| self.y[i] != first)
    }

    fn grow_depth_first(&mut self, idx: Vec<usize>, depth: usize, rng: &mut Option<&mut Rng>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&idx),
        });
        if !self.can_split(&idx, depth) {
            return id;
        }
        if let Some(split) = self.best_split(&idx, rng) {
            let left = self.grow_depth_first(split.left, depth + 1, rng);
            let right = self.grow_depth_first(split.right, depth + 1, rng);
            self.nodes[id] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
        }
        id
    }

    fn grow_best_first(&mut self, idx: Vec<usize>, max_leaves: usize, rng: &mut Option<&mut Rng>) {
        struct Pending {
            node: usize,
            depth: usize,
            split: SplitChoice,
        }
        let mut frontier: Vec<Pending> = Vec::new();
        let mut leaves = 1;
        let root_split = self.try_split(&idx, 0, rng);
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&idx),
        });
        if let Some(split) = root_split {
            frontier.push(Pending {
                node: 0,
                depth: 0,
                split,
            });
        }
        while leaves < max_leaves && !frontier.is_empty() {
            // largest gain first; ties go to the earliest created node
            let mut best = 0;
            for (k, p) in frontier.iter().enumerate() {
                let b = &frontier[best];
                if p.split.gain > b.split.gain || (p.split.gain == b.split.gain && p.node < b.node) {
                    best = k;
                }
            }
            let Pending { node, depth, split } = frontier.swap_remove(best);
            let mut children = [0usize; 2];
            for (slot, rows) in [split.left, split.right].into_iter().enumerate() {
                let child = self.nodes.len();
                self.nodes.push(Node::Leaf {
                    value: self.leaf_value(&rows),
                });
                if let Some(s) = self.try_split(&rows, depth + 1, rng) {
                    frontier.push(Pending {
                        node: child,
                        depth: depth + 1,
                        split: s,
                    });
                }
                children[slot] = child;
            }
            self.nodes[node] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: children[0],
                right: children[1],
            };
            leaves += 1;
        }
    }

    fn try_split(&self, idx: &[usize], depth: usize, rng: &mut Option<&mut Rng>) -> Option<SplitChoice> {
        if self.can_split(idx, depth) {
            self.best_split(idx, rng)
        } else {
            None
        }
    }

    fn candidate_features(&self, rng: &mut Option<&mut Rng>) -> Vec<usize> {
        let d = self.x.cols();
        match (self.g.max_features, rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < d => {
                let mut all: Vec<usize> = (0..d).collect();
                for i in 0..k {
                    let j = rng.random_range(i..d);
                    all.swap(i, j);
                }
                let mut chosen = all[..k].to_vec();
                chosen.sort_unstable();
                chosen
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&self, idx: &[usize], rng: &mut Option<&mut Rng>) -> Option<SplitChoice> {
        let m = idx.len();
        let msl = self.g.min_samples_leaf.max(1);
        let parent_cost = {
            let mut all: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
            node_cost(&mut all, self.g.criterion)
        };
        let mut best: Option<(usize, usize, f64, Vec<usize>)> = None; // feature, position, cost, order
        let mut best_cost = parent_cost;
        let tol = 1e-12 * parent_cost.abs().max(f64::MIN_POSITIVE);

        for feature in self.candidate_features(rng) {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| self.x[(a, feature)].total_cmp(&self.x[(b, feature)]).then(a.cmp(&b)));
            let ys: Vec<f64> = order.iter().map(|&i| self.y[i]).collect();
            let (left_cost, right_cost) = prefix_suffix_costs(&ys, self.g.criterion);
            let mut chosen: Option<(usize, f64)> = None;
            for pos in msl..=(m - msl) {
                let lo = self.x[(order[pos - 1], feature)];
                let hi = self.x[(order[pos], feature)];
                if lo >= hi {
                    continue;
                }
                let cost = left_cost[pos] + right_cost[pos];
                if cost < best_cost - tol && chosen.is_none_or(|(_, c)| cost < c - tol) {
                    chosen = Some((pos, cost));
                }
            }
            if let Some((pos, cost)) = chosen {
                if cost < best_cost - tol {
                    best_cost = cost;
                    best = Some((feature, pos, cost, order));
                }
            }
        }

        let (feature, pos, cost, order) = best?;
        let lo = self.x[(order[pos - 1], feature)];
        let hi = self.x[(order[pos], feature)];
        let mut threshold = 0.5 * (lo + hi);
        if threshold >= hi {
            threshold = lo;
        }
        let left = order[..pos].to_vec();
        let right = order[pos..].to_vec();
        Some(SplitChoice {
            feature,
            threshold,
            gain: parent_cost - cost,
            left,
            right,
        })
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sum of squared deviations about the mean, or of absolute deviations about
/// the median.
fn node_cost(v: &mut [f64], criterion: Criterion) -> f64 {
    match criterion {
        Criterion::SquaredError => {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|y| (y - mean).powi(2)).sum()
        }
        Criterion::AbsoluteError => {
            let med = median(v);
            v.iter().map(|y| (y - med).abs()).sum()
        }
    }
}

/// `left[p]` is the cost of `ys[..p]`, `right[p]` the cost of `ys[p..]`.
fn prefix_suffix_costs(ys: &[f64], criterion: Criterion) -> (Vec<f64>, Vec<f64>) {
    let m = ys.len();
    let mut left = vec![0.0; m + 1];
    let mut right = vec![0.0; m + 1];
    match criterion {
        Criterion::SquaredError => {
            // shifted sums for numerical stability
            let shift = ys[0];
            let (mut s, mut s2) = (0.0, 0.0);
            for p in 1..=m {
                let v = ys[p - 1] - shift;
                s += v;
                s2 += v * v;
                left[p] = (s2 - s * s / p as f64).max(0.0);
            }
            let (mut s, mut s2) = (0.0, 0.0);
            for p in (0..m).rev() {
                let v = ys[p] - shift;
                s += v;
                s2 += v * v;
                right[p] = (s2 - s * s / (m - p) as f64).max(0.0);
            }
        }
        Criterion::AbsoluteError => {
            let mut acc = RunningAbsDev::default();
            for p in 1..=m {
                acc.push(ys[p - 1]);
                left[p] = acc.cost();
            }
            let mut acc = RunningAbsDev::default();
            for p in (0..m).rev() {
                acc.push(ys[p]);
                right[p] = acc.cost();
            }
        }
    }
    (left, right)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ord64(f64);

impl Eq for Ord64 {}

impl PartialOrd for Ord64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Streaming sum of absolute deviations about the median (two heaps).
#[derive(Default)]
struct RunningAbsDev {
    lower: BinaryHeap<Ord64>,
    upper: BinaryHeap<std::cmp::Reverse<Ord64>>,
    sum_lower: f64,
    sum_upper: f64,
}

impl RunningAbsDev {
    fn push(&mut self, v: f64) {
        if self.lower.peek().is_none_or(|top| v <= top.0) {
            self.lower.push(Ord64(v));
            self.sum_lower += v;
        } else {
            self.upper.push(std::cmp::Reverse(Ord64(v)));
            self.sum_upper += v;
        }
        if self.lower.len() > self.upper.len() + 1 {
            let Ord64(t) = self.lower.pop().expect("nonempty");
            self.sum_lower -= t;
            self.upper.push(std::cmp::Reverse(Ord64(t)));
            self.sum_upper += t;
        } else if self.upper.len() > self.lower.len() {
            let std::cmp::Reverse(Ord64(t)) = self.upper.pop().expect("nonempty");
            self.sum_upper -= t;
            self.lower.push(Ord64(t));
            self.sum_lower += t;
        }
    }

    fn cost(&self) -> f64 {
        let Some(&Ord64(med)) = self.lower.peek() else {
            return 0.0;
        };
        let nl = self.lower.len() as f64;
        let nu = self.upper.len() as f64;
        (med * nl - self.sum_lower + self.sum_upper - med * nu).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_d(xs: &[f64], ys: &[f64]) -> DesignMatrix {
        let x = Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap();
        DesignMatrix::from_continuous(x, ys.to_vec()).unwrap()
    }

    #[test]
    fn constant_targets_give_single_leaf() {
        let m = one_d(&[0.0, 1.0, 2.0, 3.0], &[0.7; 4]);
        let t = fit_tree(&m, &TreeConfig::default()).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(m.features()).unwrap().values, vec![0.7; 4]);
    }

    #[test]
    fn depth_one_split_on_step_data() {
        let m = one_d(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.0, 1.0, 1.0]);
        let cfg = TreeConfig {
            max_depth: Some(1),
            min_samples_leaf: 1,
            criterion: Criterion::SquaredError,
        };
        let t = fit_tree(&m, &cfg).unwrap();
        match t.nodes()[0] {
            Node::Split { threshold, .. } => assert!(threshold > 1.0 && threshold < 2.0),
            _ => panic!("expected a split"),
        }
        assert_eq!(t.predict(m.features()).unwrap().values, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn min_samples_leaf_n_gives_root_mean() {
        let ys = [0.1, 0.4, 0.2, 0.9, 0.5];
        let m = one_d(&[0.0, 1.0, 2.0, 3.0, 4.0], &ys);
        let cfg = TreeConfig {
            max_depth: None,
            min_samples_leaf: 5,
            criterion: Criterion::SquaredError,
        };
        let t = fit_tree(&m, &cfg).unwrap();
        assert_eq!(t.nodes().len(), 1);
        let mean = ys.iter().sum::<f64>() / 5.0;
        assert!((t.predict_row(&[2.0]) - mean).abs() < 1e-15);
    }

    #[test]
    fn absolute_error_leaves_predict_median() {
        let m = one_d(&[0.0, 1.0, 2.0], &[0.0, 0.1, 5.0]);
        let cfg = TreeConfig {
            max_depth: Some(1),
            min_samples_leaf: 3,
            criterion: Criterion::AbsoluteError,
        };
        let t = fit_tree(&m, &cfg).unwrap();
        assert_eq!(t.predict_row(&[0.0]), 0.1);
    }

    /// Exhaustive depth-1 search: try every threshold between distinct
    /// consecutive values and keep the lowest total cost.
    fn brute_force_stump(xs: &[f64], ys: &[f64], criterion: Criterion, msl: usize) -> Option<(f64, f64)> {
        let mut sorted: Vec<f64> = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let mut best: Option<(f64, f64)> = None;
        for w in sorted.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            let mut l: Vec<f64> = xs.iter().zip(ys).filter(|(x, _)| **x <= thr).map(|(_, y)| *y).collect();
            let mut r: Vec<f64> = xs.iter().zip(ys).filter(|(x, _)| **x > thr).map(|(_, y)| *y).collect();
            if l.len() < msl || r.len() < msl {
                continue;
            }
            let cost = node_cost(&mut l, criterion) + node_cost(&mut r, criterion);
            if best.is_none_or(|(c, _)| cost < c - 1e-12) {
                best = Some((cost, thr));
            }
        }
        best
    }

    proptest! {
        #[test]
        fn stump_matches_exhaustive_search(
            pts in proptest::collection::vec((0u8..20, -1.0f64..1.0), 3..10),
            absolute in any::<bool>(),
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let criterion = if absolute { Criterion::AbsoluteError } else { Criterion::SquaredError };
            let m = one_d(&xs, &ys);
            let cfg = TreeConfig { max_depth: Some(1), min_samples_leaf: 1, criterion };
            let t = fit_tree(&m, &cfg).unwrap();
            let mut all = ys.clone();
            let parent = node_cost(&mut all, criterion);
            match (brute_force_stump(&xs, &ys, criterion, 1), t.nodes()[0]) {
                (Some((cost, _)), Node::Split { threshold, .. }) => {
                    prop_assert!(cost < parent);
                    let mut l: Vec<f64> = xs.iter().zip(&ys).filter(|(x, _)| **x <= threshold).map(|(_, y)| *y).collect();
                    let mut r: Vec<f64> = xs.iter().zip(&ys).filter(|(x, _)| **x > threshold).map(|(_, y)| *y).collect();
                    let got = node_cost(&mut l, criterion) + node_cost(&mut r, criterion);
                    prop_assert!((got - cost).abs() < 1e-9, "{} vs {}", got, cost);
                }
                (Some((cost, _)), Node::Leaf { .. }) => prop_assert!(cost >= parent - 1e-12 * parent.abs()),
                (None, Node::Leaf { .. }) => {}
                (None, Node::Split { .. }) => prop_assert!(false, "split without candidates"),
            }
        }

        #[test]
        fn monotone_feature_transform_is_invariant(
            pts in proptest::collection::vec((0.1f64..10.0, -1.0f64..1.0, -1.0f64..1.0), 4..10),
        ) {
            let rows: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let a = DesignMatrix::from_continuous(Matrix::from_rows(&rows).unwrap(), ys.clone()).unwrap();
            let rows_t: Vec<[f64; 2]> = rows.iter().map(|r| [r[0].ln() * 3.0 + 1.0, r[1]]).collect();
            let b = DesignMatrix::from_continuous(Matrix::from_rows(&rows_t).unwrap(), ys).unwrap();
            let cfg = TreeConfig { max_depth: None, min_samples_leaf: 1, criterion: Criterion::SquaredError };
            let pa = fit_tree(&a, &cfg).unwrap().predict(a.features()).unwrap();
            let pb = fit_tree(&b, &cfg).unwrap().predict(b.features()).unwrap();
            prop_assert_eq!(pa, pb);
        }
    }

    #[test]
    fn running_abs_dev_matches_direct() {
        let vals = [3.0, -1.0, 4.0, 1.0, 5.0, 9.0, -2.0, 6.0];
        let mut acc = RunningAbsDev::default();
        for k in 0..vals.len() {
            acc.push(vals[k]);
            let mut v = vals[..=k].to_vec();
            let direct = node_cost(&mut v, Criterion::AbsoluteError);
            assert!((acc.cost() - direct).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn best_first_respects_leaf_budget() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x / 5.0).sin()).collect();
        let m = one_d(&xs, &ys);
        let g = Growth {
            max_depth: None,
            max_leaf_nodes: Some(6),
            min_samples_leaf: 1,
            max_features: None,
            criterion: Criterion::SquaredError,
        };
        let t = grow(m.features(), m.targets(), (0..40).collect(), &g, None);
        assert_eq!(t.n_leaves(), 6);
    }
}
