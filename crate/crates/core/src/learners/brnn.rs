//! Single-hidden-layer network with Bayesian regularization.
//!
//! The objective is `beta * SSE + alpha * |theta|^2` on standardized data.
//! Parameters are optimized by full-batch gradient descent with a
//! backtracking line search; every `evidence_interval` steps the
//! hyperparameters are re-estimated from the evidence approximation
//!
//! ```text
//! H     = 2 beta J'J + 2 alpha I
//! gamma = N - 2 alpha tr(H^-1)
//! alpha = gamma / (2 |theta|^2)
//! beta  = (n - gamma) / (2 SSE)
//! ```
//!
//! where `J` is the Jacobian of the network outputs. If `H` is not positive
//! definite or the update is degenerate, `(alpha, beta)` stay frozen.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stable_mean, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrnnParams {
    pub hidden_units: usize,
    pub max_steps: usize,
    pub tolerance: f64,
    pub evidence_interval: usize,
    pub max_evidence_updates: usize,
    pub initial_alpha: f64,
    pub initial_beta: f64,
}

impl Default for BrnnParams {
    fn default() -> Self {
        Self {
            hidden_units: 20,
            max_steps: 1000,
            tolerance: 1e-8,
            evidence_interval: 10,
            max_evidence_updates: 10,
            initial_alpha: 0.01,
            initial_beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    fn fit(x: &Matrix) -> Self {
        let n = x.n_rows() as f64;
        let (mut mean, mut scale) = (Vec::new(), Vec::new());
        for j in 0..x.n_cols() {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / n;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            mean.push(m);
            scale.push(if s > 0.0 { s } else { 1.0 });
        }
        Self { mean, scale }
    }

    fn transform(&self, x: &Matrix) -> DMatrix<f64> {
        DMatrix::from_fn(x.n_rows(), x.n_cols(), |i, j| (x.get(i, j) - self.mean[j]) / self.scale[j])
    }
}

/// Network weights: hidden layer `w1` (hidden x inputs) and `b1`, output
/// weights `w2` and bias `b2`, flattened in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub n_inputs: usize,
    pub hidden: usize,
    pub theta: Vec<f64>,
}

impl Network {
    pub fn n_params(n_inputs: usize, hidden: usize) -> usize {
        hidden * (n_inputs + 2) + 1
    }

    fn parts(&self, theta: &[f64]) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let (h, p) = (self.hidden, self.n_inputs);
        let w1 = DMatrix::from_row_slice(h, p, &theta[..h * p]);
        let b1 = DVector::from_column_slice(&theta[h * p..h * p + h]);
        let w2 = DVector::from_column_slice(&theta[h * p + h..h * p + 2 * h]);
        (w1, b1, w2, theta[h * p + 2 * h])
    }

    /// Hidden activations (n x hidden) and outputs.
    fn forward(&self, theta: &[f64], x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (w1, b1, w2, b2) = self.parts(theta);
        let mut z = x * w1.transpose();
        for mut row in z.row_iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v + b1[k]).tanh();
            }
        }
        let out = z.clone() * &w2;
        (z, out.add_scalar(b2))
    }

    pub fn output(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.forward(&self.theta, x).1
    }
}

/// Penalized loss `beta * SSE + alpha * |theta|^2` and its gradient.
pub fn loss_and_gradient(
    net: &Network,
    theta: &[f64],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    beta: f64,
) -> (f64, Vec<f64>) {
    let (h, p) = (net.hidden, net.n_inputs);
    let (z, out) = net.forward(theta, x);
    let e = out - y;
    let sse = e.norm_squared();
    let wsq: f64 = theta.iter().map(|v| v * v).sum();
    let loss = beta * sse + alpha * wsq;

    let (_, _, w2, _) = net.parts(theta);
    let de = e * (2.0 * beta);
    let g_w2 = z.transpose() * &de;
    let g_b2 = de.sum();
    // dA = (de w2') .* (1 - z^2)
    let mut da = &de * w2.transpose();
    da.zip_apply(&z, |d, zv| *d *= 1.0 - zv * zv);
    let g_w1 = da.transpose() * x;
    let g_b1 = da.row_sum();

    let mut grad = vec![0.0; theta.len()];
    for k in 0..h {
        for j in 0..p {
            grad[k * p + j] = g_w1[(k, j)];
        }
        grad[h * p + k] = g_b1[k];
        grad[h * p + h + k] = g_w2[k];
    }
    grad[h * p + 2 * h] = g_b2;
    for (g, t) in grad.iter_mut().zip(theta) {
        *g += 2.0 * alpha * t;
    }
    (loss, grad)
}

/// Jacobian of the outputs with respect to the parameters (n x N).
fn jacobian(net: &Network, theta: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let (h, p) = (net.hidden, net.n_inputs);
    let n = x.nrows();
    let (z, _) = net.forward(theta, x);
    let (_, _, w2, _) = net.parts(theta);
    let mut j = DMatrix::<f64>::zeros(n, Network::n_params(p, h));
    for i in 0..n {
        for k in 0..h {
            let d = w2[k] * (1.0 - z[(i, k)] * z[(i, k)]);
            for c in 0..p {
                j[(i, k * p + c)] = d * x[(i, c)];
            }
            j[(i, h * p + k)] = d;
            j[(i, h * p + h + k)] = z[(i, k)];
        }
        j[(i, h * p + 2 * h)] = 1.0;
    }
    j
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BrnnState {
    /// Target had no spread; the model predicts its mean.
    Constant(f64),
    Trained {
        network: Network,
        x_scaler: Scaler,
        y_mean: f64,
        y_scale: f64,
        alpha: f64,
        beta: f64,
        effective_params: f64,
        steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrnnModel {
    pub state: BrnnState,
}

impl BrnnModel {
    pub fn fit(x: &Matrix, y: &[f64], params: &BrnnParams, seed: u64) -> Result<Self> {
        let n = x.n_rows();
        let p = x.n_cols();
        let y_mean = stable_mean(y.iter().copied());
        let y_scale = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if !(y_scale > 1e-12 * y_mean.abs().max(1.0)) {
            return Ok(Self {
                state: BrnnState::Constant(y_mean),
            });
        }
        let x_scaler = Scaler::fit(x);
        let xs = x_scaler.transform(x);
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_scale));

        let h = params.hidden_units.max(1);
        let n_params = Network::n_params(p, h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; n_params];
        let in_scale = 1.0 / (p.max(1) as f64).sqrt();
        let out_scale = 1.0 / (h as f64).sqrt();
        for (i, t) in theta.iter_mut().enumerate() {
            let u: f64 = rng.random_range(-1.0..1.0);
            *t = if i < h * p {
                u * in_scale
            } else if i < h * p + h {
                u
            } else if i < h * p + 2 * h {
                u * out_scale
            } else {
                0.0
            };
        }
        let mut net = Network {
            n_inputs: p,
            hidden: h,
            theta: Vec::new(),
        };

        let mut alpha = params.initial_alpha;
        let mut beta = params.initial_beta;
        let mut effective = n_params as f64;
        let mut frozen = false;
        let mut updates = 0;
        let mut step_size = 1.0 / n as f64;
        let (mut loss, mut grad) = loss_and_gradient(&net, &theta, &xs, &ys, alpha, beta);
        let mut steps = 0;

        for step in 1..=params.max_steps {
            steps = step;
            let g2: f64 = grad.iter().map(|g| g * g).sum();
            if g2 == 0.0 || !g2.is_finite() {
                break;
            }
            let mut eta = step_size * 2.0;
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - eta * g).collect();
                let (l, gr) = loss_and_gradient(&net, &trial, &xs, &ys, alpha, beta);
                if l.is_finite() && l <= loss - 1e-4 * eta * g2 {
                    accepted = Some((trial, l, gr));
                    break;
                }
                eta *= 0.5;
            }
            let Some((trial, new_loss, new_grad)) = accepted else {
                break;
            };
            step_size = eta;
            let rel = (loss - new_loss).abs() / loss.abs().max(f64::MIN_POSITIVE);
            theta = trial;
            loss = new_loss;
            grad = new_grad;

            if !frozen && updates < params.max_evidence_updates && step % params.evidence_interval.max(1) == 0 {
                updates += 1;
                match evidence_update(&net, &theta, &xs, &ys, alpha, beta) {
                    Some((a, b, g)) => {
                        alpha = a;
                        beta = b;
                        effective = g;
                        let (l, gr) = loss_and_gradient(&net, &theta, &xs, &ys, alpha, beta);
                        loss = l;
                        grad = gr;
                        continue;
                    }
                    None => frozen = true,
                }
            }
            if rel < params.tolerance {
                break;
            }
        }

        if !theta.iter().all(|t| t.is_finite()) {
            return Err(Error::Numeric("network weights diverged".into()));
        }
        net.theta = theta;
        Ok(Self {
            state: BrnnState::Trained {
                network: net,
                x_scaler,
                y_mean,
                y_scale,
                alpha,
                beta,
                effective_params: effective,
                steps,
            },
        })
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        match &self.state {
            BrnnState::Constant(c) => vec![*c; x.n_rows()],
            BrnnState::Trained {
                network,
                x_scaler,
                y_mean,
                y_scale,
                ..
            } => {
                let xs = x_scaler.transform(x);
                network.output(&xs).iter().map(|o| y_mean + y_scale * o).collect()
            }
        }
    }
}

fn evidence_update(
    net: &Network,
    theta: &[f64],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    beta: f64,
) -> Option<(f64, f64, f64)> {
    let n_params = theta.len() as f64;
    let n = x.nrows() as f64;
    let j = jacobian(net, theta, x);
    let mut hess = j.tr_mul(&j) * (2.0 * beta);
    for d in 0..hess.nrows() {
        hess[(d, d)] += 2.0 * alpha;
    }
    let chol = hess.cholesky()?;
    let trace_inv = chol.inverse().trace();
    let gamma = n_params - 2.0 * alpha * trace_inv;
    let (_, out) = net.forward(theta, x);
    let sse = (out - y).norm_squared();
    let wsq: f64 = theta.iter().map(|v| v * v).sum();
    if !(gamma > 0.0 && gamma < n && sse > 0.0 && wsq > 0.0) {
        return None;
    }
    let a = gamma / (2.0 * wsq);
    let b = (n - gamma) / (2.0 * sse);
    (a.is_finite() && b.is_finite()).then_some((a, b, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_short_circuits() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let m = BrnnModel::fit(&x, &[2.5, 2.5, 2.5], &BrnnParams::default(), 1).unwrap();
        assert_eq!(m.predict(&x), vec![2.5; 3]);
    }

    #[test]
    fn parameter_count() {
        assert_eq!(Network::n_params(9, 20), 221);
        assert_eq!(Network::n_params(6, 20), 161);
    }
}
