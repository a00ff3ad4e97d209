//! Gradient boosting with squared-error loss.
//!
//! [`GradientBoosting`] fits variance-reduction trees to residuals on a random
//! subsample each round. [`NewtonBoosting`] grows trees on first and second
//! derivatives with an L2 penalty on leaf weights, so each leaf holds
//! `-G / (H + lambda)` scaled by the learning rate.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowConfig, Signal, Tree};
use crate::data::{stable_mean, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            learning_rate: 0.1,
            max_depth: 3,
            subsample: 0.5,
            min_samples_leaf: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XgbParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub min_split_gain: f64,
    pub min_child_weight: f64,
    pub subsample: f64,
}

impl Default for XgbParams {
    fn default() -> Self {
        Self {
            n_rounds: 500,
            learning_rate: 0.3,
            max_depth: 6,
            lambda: 1.0,
            min_split_gain: 0.0,
            min_child_weight: 1.0,
            subsample: 1.0,
        }
    }
}

fn subsample_rows(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let k = ((n as f64 * fraction).floor() as usize).clamp(1, n);
    let mut rows = sample(rng, n, k).into_vec();
    rows.sort_unstable();
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GradientBoosting {
    pub fn fit(x: &Matrix, y: &[f64], params: &GbmParams, seed: u64) -> Self {
        let n = x.n_rows();
        let init = stable_mean(y.iter().copied());
        let mut pred = vec![init; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GrowConfig {
            max_depth: params.max_depth,
            min_samples_split: 2 * params.min_samples_leaf.max(1),
            min_samples_leaf: params.min_samples_leaf,
            max_features: None,
            criterion: Criterion::Variance,
        };
        let mut trees = Vec::with_capacity(params.n_trees);
        for _ in 0..params.n_trees {
            let rows = subsample_rows(n, params.subsample, &mut rng);
            let resid: Vec<f64> = rows.iter().map(|&i| y[i] - pred[i]).collect();
            let tree = grow(x, &rows, Signal { target: &resid, hessian: None }, cfg, 0);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += params.learning_rate * tree.predict_row(x.row(i));
            }
            trees.push(tree);
        }
        Self {
            init,
            learning_rate: params.learning_rate,
            trees,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.staged(row, self.trees.len())
    }

    fn staged(&self, row: &[f64], k: usize) -> f64 {
        self.trees[..k]
            .iter()
            .fold(self.init, |acc, t| acc + self.learning_rate * t.predict_row(row))
    }

    /// Training MSE after each boosting round, starting with round 0.
    pub fn training_curve(&self, x: &Matrix, y: &[f64]) -> Vec<f64> {
        boosting_curve(x, y, self.init, self.learning_rate, &self.trees)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonBoosting {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl NewtonBoosting {
    pub fn fit(x: &Matrix, y: &[f64], params: &XgbParams, seed: u64) -> Self {
        let n = x.n_rows();
        let base_score = stable_mean(y.iter().copied());
        let mut pred = vec![base_score; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GrowConfig {
            max_depth: params.max_depth,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
            criterion: Criterion::Newton {
                lambda: params.lambda,
                min_gain: params.min_split_gain,
                min_child_hessian: params.min_child_weight,
            },
        };
        let mut trees = Vec::with_capacity(params.n_rounds);
        for _ in 0..params.n_rounds {
            let rows = subsample_rows(n, params.subsample, &mut rng);
            // d/dp of (p - y)^2 / 2 and its second derivative.
            let grad: Vec<f64> = rows.iter().map(|&i| pred[i] - y[i]).collect();
            let hess = vec![1.0; rows.len()];
            let mut tree = grow(
                x,
                &rows,
                Signal {
                    target: &grad,
                    hessian: Some(&hess),
                },
                cfg,
                0,
            );
            tree.scale_leaves(params.learning_rate);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += tree.predict_row(x.row(i));
            }
            trees.push(tree);
        }
        Self {
            base_score,
            learning_rate: params.learning_rate,
            trees,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + t.predict_row(row))
    }

    pub fn training_curve(&self, x: &Matrix, y: &[f64]) -> Vec<f64> {
        boosting_curve(x, y, self.base_score, 1.0, &self.trees)
    }
}

fn boosting_curve(x: &Matrix, y: &[f64], init: f64, scale: f64, trees: &[Tree]) -> Vec<f64> {
    let n = x.n_rows();
    let mut pred = vec![init; n];
    let mse = |pred: &[f64]| pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64;
    let mut curve = vec![mse(&pred)];
    for t in trees {
        for (i, p) in pred.iter_mut().enumerate() {
            *p += scale * t.predict_row(x.row(i));
        }
        curve.push(mse(&pred));
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::tree::Node;

    #[test]
    fn zero_rounds_predict_the_mean() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let y = [1.0, 2.0, 6.0];
        let m = GradientBoosting::fit(&x, &y, &GbmParams { n_trees: 0, ..Default::default() }, 0);
        assert_eq!(m.predict_row(&[5.0]), 3.0);
    }

    #[test]
    fn depth_one_leaf_weights_follow_closed_form() {
        // Base score is the mean 2.5, so gradients pred - y are (1.5, 0.5, -0.5, -1.5).
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let y = [1.0, 2.0, 3.0, 4.0];
        let params = XgbParams {
            n_rounds: 1,
            learning_rate: 1.0,
            max_depth: 1,
            ..Default::default()
        };
        let m = NewtonBoosting::fit(&x, &y, &params, 0);
        let tree = &m.trees[0];
        let Node::Split { threshold, .. } = tree.nodes()[0] else {
            panic!("expected a split")
        };
        assert_eq!(threshold, 1.5);
        // Left: G = 2, H = 2 -> w = -2/3. Right: G = -2, H = 2 -> w = 2/3.
        assert!((tree.predict_row(&[0.0]) + 2.0 / 3.0).abs() < 1e-15);
        assert!((tree.predict_row(&[3.0]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
