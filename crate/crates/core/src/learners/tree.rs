//! Regression trees grown on presorted feature columns.
//!
//! One grower serves the random forest and gradient boosting (variance
//! reduction on targets or residuals) and the second-order booster
//! (gradient/hessian gain with an L2 leaf penalty).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stable_mean, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub(crate) fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let Node::Leaf { value } = node {
                *value *= factor;
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Adds each split's gain to `acc[feature]`.
    pub fn accumulate_gain(&self, acc: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Split { feature, gain, .. } = n {
                acc[*feature] += *gain;
            }
        }
    }

    pub fn uses_feature(&self, j: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature, .. } if *feature == j))
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Criterion {
    /// Sum-of-squares reduction; leaves hold the mean target.
    Variance,
    /// Second-order gain; leaves hold `-G / (H + lambda)`.
    Newton {
        lambda: f64,
        min_gain: f64,
        min_child_hessian: f64,
    },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Number of features drawn per node; `None` evaluates all of them.
    pub max_features: Option<usize>,
    pub criterion: Criterion,
}

/// Per-sample training signal. For `Variance` only `target` is read; for
/// `Newton` `target` holds gradients and `hessian` the hessians.
pub(crate) struct Signal<'a> {
    pub target: &'a [f64],
    pub hessian: Option<&'a [f64]>,
}

struct Grower<'a> {
    cfg: GrowConfig,
    /// Feature values per sample, one vector per feature.
    values: Vec<Vec<f64>>,
    target: &'a [f64],
    hessian: Option<&'a [f64]>,
    /// Sample positions sorted by each feature, partitioned in place per node.
    sorted: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    rng: Option<ChaCha8Rng>,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    n_left: usize,
}

/// Grows one tree on the samples `rows` (duplicates allowed, as produced by
/// bootstrapping). `signal` is aligned with `rows`.
pub(crate) fn grow(x: &Matrix, rows: &[usize], signal: Signal<'_>, cfg: GrowConfig, seed: u64) -> Tree {
    let n = rows.len();
    let p = x.n_cols();
    if n == 0 {
        return Tree::leaf(0.0);
    }
    let values: Vec<Vec<f64>> = (0..p)
        .map(|j| rows.iter().map(|&r| x.get(r, j)).collect())
        .collect();
    let sorted: Vec<Vec<u32>> = values
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let rng = match cfg.max_features {
        Some(m) if m < p => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut g = Grower {
        cfg,
        values,
        target: signal.target,
        hessian: signal.hessian,
        sorted,
        goes_left: vec![false; n],
        scratch: Vec::with_capacity(n),
        rng,
        nodes: Vec::new(),
    };
    g.build(0, n, 0);
    Tree { nodes: g.nodes }
}

impl Grower<'_> {
    fn h(&self, s: usize) -> f64 {
        self.hessian.map_or(1.0, |h| h[s])
    }

    /// Positions of the node's samples, in ascending sample order.
    fn node_samples(&self, start: usize, end: usize) -> Vec<usize> {
        let mut v: Vec<usize> = match self.sorted.first() {
            Some(s) => s[start..end].iter().map(|&i| i as usize).collect(),
            None => (start..end).collect(),
        };
        v.sort_unstable();
        v
    }

    fn leaf_value(&self, start: usize, end: usize) -> f64 {
        let samples = self.node_samples(start, end);
        match self.cfg.criterion {
            Criterion::Variance => stable_mean(samples.iter().map(|&s| self.target[s])),
            Criterion::Newton { lambda, .. } => {
                let g: f64 = samples.iter().map(|&s| self.target[s]).sum();
                let h: f64 = samples.iter().map(|&s| self.h(s)).sum();
                -g / (h + lambda)
            }
        }
    }

    fn build(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let n = end - start;
        let split = if depth < self.cfg.max_depth && n >= self.cfg.min_samples_split && !self.sorted.is_empty() {
            self.best_split(start, end)
        } else {
            None
        };
        match split {
            None => {
                let value = self.leaf_value(start, end);
                self.nodes[id] = Node::Leaf { value };
            }
            Some(best) => {
                self.partition(start, end, &best);
                let mid = start + best.n_left;
                let left = self.build(start, mid, depth + 1);
                let right = self.build(mid, end, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: best.feature,
                    threshold: best.threshold,
                    left,
                    right,
                    gain: best.gain,
                };
            }
        }
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.sorted.len();
        match (self.cfg.max_features, self.rng.as_mut()) {
            (Some(m), Some(rng)) if m < p => {
                let mut f = sample(rng, p, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    fn best_split(&mut self, start: usize, end: usize) -> Option<BestSplit> {
        let features = self.candidate_features();
        let order0 = &self.sorted[0][start..end];
        let total_g: f64 = order0.iter().map(|&s| self.target[s as usize]).sum();
        let total_h: f64 = order0.iter().map(|&s| self.h(s as usize)).sum();
        let n = end - start;
        let min_leaf = self.cfg.min_samples_leaf.max(1);
        let mut best: Option<BestSplit> = None;

        for &f in &features {
            let order = &self.sorted[f][start..end];
            let col = &self.values[f];
            let mut gl = 0.0;
            let mut hl = 0.0;
            for k in 1..n {
                let s_prev = order[k - 1] as usize;
                gl += self.target[s_prev];
                hl += self.h(s_prev);
                let (lo, hi) = (col[s_prev], col[order[k] as usize]);
                if !(lo < hi) || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let gr = total_g - gl;
                let hr = total_h - hl;
                let gain = match self.cfg.criterion {
                    Criterion::Variance => {
                        let nl = k as f64;
                        let nr = (n - k) as f64;
                        gl * gl / nl + gr * gr / nr - total_g * total_g / n as f64
                    }
                    Criterion::Newton {
                        lambda,
                        min_gain,
                        min_child_hessian,
                    } => {
                        if hl < min_child_hessian || hr < min_child_hessian {
                            continue;
                        }
                        let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda)
                            - total_g * total_g / (total_h + lambda);
                        if gain <= min_gain {
                            continue;
                        }
                        gain
                    }
                };
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                        n_left: k,
                    });
                }
            }
        }
        best
    }

    /// Stable partition of every feature's order within the node.
    fn partition(&mut self, start: usize, end: usize, best: &BestSplit) {
        let col = &self.values[best.feature];
        for &s in &self.sorted[best.feature][start..end] {
            self.goes_left[s as usize] = col[s as usize] <= best.threshold;
        }
        for order in self.sorted.iter_mut() {
            self.scratch.clear();
            let mut w = start;
            for k in start..end {
                let s = order[k];
                if self.goes_left[s as usize] {
                    order[w] = s;
                    w += 1;
                } else {
                    self.scratch.push(s);
                }
            }
            debug_assert_eq!(w - start, best.n_left);
            order[w..end].copy_from_slice(&self.scratch);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(criterion: Criterion) -> GrowConfig {
        GrowConfig {
            max_depth: usize::MAX,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
            criterion,
        }
    }

    #[test]
    fn step_function_is_split_once() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let y = [1.0, 1.0, 5.0, 5.0];
        let t = grow(&x, &[0, 1, 2, 3], Signal { target: &y, hessian: None }, cfg(Criterion::Variance), 0);
        assert_eq!(t.n_leaves(), 2);
        match &t.nodes()[0] {
            Node::Split { threshold, gain, .. } => {
                assert_eq!(*threshold, 1.5);
                // SSE of parent is 16, children are pure.
                assert!((gain - 16.0).abs() < 1e-12);
            }
            _ => panic!("expected split"),
        }
        assert_eq!(t.predict_row(&[0.2]), 1.0);
        assert_eq!(t.predict_row(&[2.7]), 5.0);
    }

    #[test]
    fn constant_feature_never_splits() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]).unwrap();
        let y = [0.0, 1.0, 2.0];
        let t = grow(&x, &[0, 1, 2], Signal { target: &y, hessian: None }, cfg(Criterion::Variance), 0);
        assert!(!t.uses_feature(0));
        assert!(t.uses_feature(1));
    }

    #[test]
    fn bootstrap_duplicates_are_respected() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let y = [2.0, 2.0, 8.0];
        let t = grow(&x, &[0, 0, 1], Signal { target: &y, hessian: None }, cfg(Criterion::Variance), 0);
        assert_eq!(t.predict_row(&[0.0]), 2.0);
        assert_eq!(t.predict_row(&[1.0]), 8.0);
    }

    #[test]
    fn newton_leaf_is_penalized_mean_gradient() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let g = [1.0, 2.0, 3.0];
        let h = [1.0, 1.0, 1.0];
        let mut c = cfg(Criterion::Newton {
            lambda: 1.0,
            min_gain: 0.0,
            min_child_hessian: 1.0,
        });
        c.max_depth = 0;
        let t = grow(&x, &[0, 1, 2], Signal { target: &g, hessian: Some(&h) }, c, 0);
        assert_eq!(t.predict_row(&[0.0]), -6.0 / 4.0);
    }
}
