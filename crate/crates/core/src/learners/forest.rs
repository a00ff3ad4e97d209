//! Random forest regression: bootstrap aggregation of randomized trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowConfig, Signal, Tree};
use crate::data::{stable_mean, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features drawn per split; `None` means `max(1, floor(p / 3))`.
    pub max_features: Option<usize>,
    /// Nodes holding at most this many samples become leaves.
    pub min_node_size: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            max_features: None,
            min_node_size: 5,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub max_features: Option<usize>,
    pub min_node_size: usize,
}

/// Single CART regression tree, grown with the same rules as forest members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub tree: Tree,
}

impl DecisionTree {
    pub fn fit(x: &Matrix, y: &[f64], params: &TreeParams, seed: u64) -> Self {
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let cfg = GrowConfig {
            max_depth: params.max_depth.unwrap_or(usize::MAX),
            min_samples_split: params.min_node_size + 1,
            min_samples_leaf: 1,
            max_features: params.max_features,
            criterion: Criterion::Variance,
        };
        Self {
            tree: grow(x, &rows, Signal { target: y, hessian: None }, cfg, seed),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.tree.predict_row(row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

pub(crate) fn default_mtry(p: usize) -> usize {
    (p / 3).max(1)
}

impl RandomForest {
    pub fn fit(x: &Matrix, y: &[f64], params: &ForestParams, seed: u64) -> Self {
        let n = x.n_rows();
        let p = x.n_cols();
        let mtry = params.max_features.unwrap_or_else(|| default_mtry(p)).clamp(1, p.max(1));
        let cfg = GrowConfig {
            max_depth: usize::MAX,
            min_samples_split: params.min_node_size + 1,
            min_samples_leaf: 1,
            max_features: Some(mtry),
            criterion: Criterion::Variance,
        };
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let tree_seed = seed ^ t as u64;
                let rows: Vec<usize> = if params.bootstrap {
                    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed.rotate_left(17) ^ 0x9e37_79b9_7f4a_7c15);
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let target: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
                grow(x, &rows, Signal { target: &target, hessian: None }, cfg, tree_seed)
            })
            .collect();
        Self { trees }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        stable_mean(self.trees.iter().map(|t| t.predict_row(row)))
    }
}
