//! Ordinary least squares with intercept.
//!
//! Columns are centered and scaled to unit norm before an SVD solve, so a
//! rank-deficient design yields the minimum-norm solution in the scaled
//! coordinates; the fit is flagged when that happens.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub rank_deficient: bool,
}

/// Least-squares fit of `y` on the columns of `x` plus an intercept.
pub fn least_squares(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    let n = x.n_rows();
    let p = x.n_cols();
    if y.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y.len() });
    }
    if n == 0 {
        return Err(Error::Empty("training rows"));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(LinearModel {
            intercept: y_mean,
            weights: Vec::new(),
            rank_deficient: false,
        });
    }
    let means: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let mut a = DMatrix::<f64>::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            a[(i, j)] = x.get(i, j) - means[j];
        }
    }
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let norm = a.column(j).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let b = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = s_max * n.max(p) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let rank_deficient = rank < p;
    let sol = if s_max > 0.0 {
        svd.solve(&b, tol).map_err(|e| Error::Numeric(e.to_string()))?
    } else {
        DVector::zeros(p)
    };

    let weights: Vec<f64> = (0..p).map(|j| sol[j] / scales[j]).collect();
    let intercept = y_mean - weights.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>();
    Ok(LinearModel {
        intercept,
        weights,
        rank_deficient,
    })
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_line_is_recovered() {
        let rows: Vec<[f64; 1]> = (0..20).map(|i| [i as f64 * 0.37 - 2.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let m = least_squares(&Matrix::from_rows(&rows).unwrap(), &y).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-8);
        assert!((m.intercept - 1.0).abs() < 1e-8);
        assert!(!m.rank_deficient);
    }

    #[test]
    fn duplicated_column_flags_rank_deficiency() {
        let rows: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, i as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 4.0 * r[0]).collect();
        let m = least_squares(&Matrix::from_rows(&rows).unwrap(), &y).unwrap();
        assert!(m.rank_deficient);
        // Minimum-norm split of the weight across identical columns.
        assert!((m.weights[0] - 2.0).abs() < 1e-9);
        assert!((m.weights[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_column_gets_zero_weight() {
        let rows: Vec<[f64; 2]> = (0..10).map(|i| [3.0, i as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[1] + 5.0).collect();
        let m = least_squares(&Matrix::from_rows(&rows).unwrap(), &y).unwrap();
        assert_eq!(m.weights[0], 0.0);
        assert!((m.intercept - 5.0).abs() < 1e-9);
    }
}
