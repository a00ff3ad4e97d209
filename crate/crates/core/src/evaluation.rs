//! Squared-error scoring, skill scores and rankings.

use std::collections::BTreeMap;

use crate::data::median;
use crate::error::{Error, Result};

pub fn squared_error(prediction: f64, truth: f64) -> f64 {
    let d = prediction - truth;
    d * d
}

fn check_pair(preds: &[f64], truth: &[f64]) -> Result<()> {
    if preds.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truth.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("prediction vector"));
    }
    if !preds.iter().chain(truth).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("predictions or truth"));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(preds: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(preds, truth)?;
    let sum: f64 = preds.iter().zip(truth).map(|(p, t)| squared_error(*p, *t)).sum();
    Ok(sum / preds.len() as f64)
}

/// Median squared error; even counts take the midpoint of the two central
/// order statistics.
pub fn mdse(preds: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(preds, truth)?;
    let se: Vec<f64> = preds.iter().zip(truth).map(|(p, t)| squared_error(*p, *t)).collect();
    Ok(median(&se))
}

/// Relative improvement in percent over a benchmark MSE.
pub fn skill_score(mse_learner: f64, mse_benchmark: f64) -> Result<f64> {
    if !(mse_learner.is_finite() && mse_benchmark.is_finite()) {
        return Err(Error::NonFinite("skill score input"));
    }
    if mse_benchmark <= 0.0 {
        return Err(Error::invalid("benchmark MSE is zero; skill score undefined"));
    }
    Ok(100.0 * (1.0 - mse_learner / mse_benchmark))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

/// Competition ranking: best gets 1, ties share the minimum rank.
pub fn rank_learners<K: Ord + Clone>(scores: &BTreeMap<K, f64>, direction: Direction) -> Result<BTreeMap<K, usize>> {
    if scores.is_empty() {
        return Err(Error::Empty("score map"));
    }
    if !scores.values().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("ranking metric"));
    }
    let key = |v: f64| match direction {
        Direction::LowerIsBetter => v,
        Direction::HigherIsBetter => -v,
    };
    Ok(scores
        .iter()
        .map(|(k, &v)| {
            let better = scores.values().filter(|&&o| key(o) < key(v)).count();
            (k.clone(), better + 1)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_error_examples() {
        assert_eq!(squared_error(3.0, 3.0), 0.0);
        assert_eq!(squared_error(5.0, 2.0), 9.0);
        assert_eq!(squared_error(2.0, 5.0), 9.0);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 2.5);
        assert_eq!(mse(&[4.0, 4.0], &[4.0, 4.0]).unwrap(), 0.0);
        assert!(mse(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_mean_prediction_gives_population_variance() {
        let truth = [1.0, 2.0, 4.0, 9.0];
        let m = truth.iter().sum::<f64>() / 4.0;
        let var = truth.iter().map(|t| (t - m).powi(2)).sum::<f64>() / 4.0;
        assert!((mse(&[m; 4], &truth).unwrap() - var).abs() < 1e-12);
    }

    #[test]
    fn mdse_examples() {
        assert_eq!(mdse(&[0.0, 0.0, 10.0], &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(mdse(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 0.0, 0.0]).unwrap(), 6.5);
    }

    #[test]
    fn skill_score_examples() {
        assert_eq!(skill_score(50.0, 100.0).unwrap(), 50.0);
        assert_eq!(skill_score(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(skill_score(150.0, 100.0).unwrap(), -50.0);
        assert!(skill_score(1.0, 0.0).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        let s: BTreeMap<&str, f64> = [("A", 1.0), ("B", 1.0), ("C", 3.0)].into_iter().collect();
        let r = rank_learners(&s, Direction::LowerIsBetter).unwrap();
        assert_eq!((r["A"], r["B"], r["C"]), (1, 1, 3));
        let r = rank_learners(&s, Direction::HigherIsBetter).unwrap();
        assert_eq!((r["A"], r["B"], r["C"]), (2, 2, 1));
        let bad: BTreeMap<&str, f64> = [("A", f64::NAN)].into_iter().collect();
        assert!(rank_learners(&bad, Direction::LowerIsBetter).is_err());
    }
}
