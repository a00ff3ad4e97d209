//! Permutation importance and split-gain importance.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::evaluation;
use crate::geo::FeatureTable;
use crate::learners::{FittedRegressor, Model};

pub const DEFAULT_REPEATS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImportanceMethod {
    /// Mean MSE increase after permuting one column.
    Permutation,
    /// Normalized second-order split gain of a Newton-boosted ensemble.
    GainNewton,
    /// Normalized variance-reduction split gain of a gradient-boosted ensemble.
    GainVariance,
}

impl fmt::Display for ImportanceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImportanceMethod::Permutation => "permutation",
            ImportanceMethod::GainNewton => "gain_xgboost",
            ImportanceMethod::GainVariance => "gain_gbm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    /// Reported score: clamped at zero for permutation, gain fraction otherwise.
    pub score: f64,
    /// Unclamped mean MSE increase, or total gain.
    pub raw: f64,
    /// Standard deviation across permutation repeats (zero for gain).
    pub spread: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub method: ImportanceMethod,
    /// One entry per feature, in column order.
    pub entries: Vec<FeatureScore>,
    pub repeats: usize,
    /// Set when a gain report was built from a model without any split.
    pub no_splits: bool,
}

impl ImportanceReport {
    fn new(method: ImportanceMethod, names: &[String], scores: Vec<f64>, raw: Vec<f64>, spread: Vec<f64>, repeats: usize) -> Self {
        let ranks = shared_min_ranks(&scores);
        let entries = names
            .iter()
            .enumerate()
            .map(|(j, n)| FeatureScore {
                feature: n.clone(),
                score: scores[j],
                raw: raw[j],
                spread: spread[j],
                rank: ranks[j],
            })
            .collect();
        Self {
            method,
            entries,
            repeats,
            no_splits: false,
        }
    }

    pub fn score(&self, feature: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.feature == feature).map(|e| e.score)
    }

    /// Bound on |raw| for a feature whose true importance is zero: three
    /// standard errors across repeats.
    pub fn noise_bound(&self, j: usize) -> f64 {
        let e = &self.entries[j];
        3.0 * e.spread / (self.repeats.max(1) as f64).sqrt() + 1e-12
    }
}

fn shared_min_ranks(scores: &[f64]) -> Vec<usize> {
    scores
        .iter()
        .map(|s| scores.iter().filter(|o| *o > s).count() + 1)
        .collect()
}

fn derive_seed(seed: u64, feature: usize, repeat: usize) -> u64 {
    seed ^ ((feature as u64) << 32) ^ (repeat as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Mean MSE increase when each column of `x` is permuted, over `repeats`
/// seeded permutations.
pub fn permutation_importance(
    model: &FittedRegressor,
    x: &Matrix,
    y: &[f64],
    feature_names: &[String],
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if repeats == 0 {
        return Err(Error::invalid("permutation importance needs at least one repeat"));
    }
    if x.n_cols() != model.n_features() || feature_names.len() != x.n_cols() {
        return Err(Error::WidthMismatch {
            expected: model.n_features(),
            got: x.n_cols(),
        });
    }
    let baseline = evaluation::mse(&model.predict(x)?, y)?;
    let p = x.n_cols();
    let jobs: Vec<(usize, usize)> = (0..p).flat_map(|j| (0..repeats).map(move |r| (j, r))).collect();
    let increases: Vec<f64> = jobs
        .par_iter()
        .map(|&(j, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, j, r));
            let mut col = x.column(j);
            col.shuffle(&mut rng);
            let mut xp = x.clone();
            for (i, v) in col.into_iter().enumerate() {
                xp.set(i, j, v);
            }
            Ok(evaluation::mse(&model.predict(&xp)?, y)? - baseline)
        })
        .collect::<Result<_>>()?;

    let mut raw = Vec::with_capacity(p);
    let mut spread = Vec::with_capacity(p);
    for j in 0..p {
        let v = &increases[j * repeats..(j + 1) * repeats];
        let m = v.iter().sum::<f64>() / repeats as f64;
        let var = v.iter().map(|d| (d - m).powi(2)).sum::<f64>() / repeats as f64;
        raw.push(m);
        spread.push(var.sqrt());
    }
    let scores = raw.iter().map(|v| v.max(0.0)).collect();
    Ok(ImportanceReport::new(ImportanceMethod::Permutation, feature_names, scores, raw, spread, repeats))
}

pub fn permutation_importance_table(
    model: &FittedRegressor,
    table: &FeatureTable,
    repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    permutation_importance(model, &table.matrix(), &table.targets(), &table.feature_names, repeats, seed)
}

/// Split gain summed over every tree, normalized to fractions.
pub fn gain_importance(model: &FittedRegressor, feature_names: &[String]) -> Result<ImportanceReport> {
    let p = model.n_features();
    if feature_names.len() != p {
        return Err(Error::WidthMismatch {
            expected: p,
            got: feature_names.len(),
        });
    }
    let mut totals = vec![0.0; p];
    let method = match &model.model {
        Model::Xgb(m) => {
            m.trees.iter().for_each(|t| t.accumulate_gain(&mut totals));
            ImportanceMethod::GainNewton
        }
        Model::Gbm(m) => {
            m.trees.iter().for_each(|t| t.accumulate_gain(&mut totals));
            ImportanceMethod::GainVariance
        }
        _ => {
            return Err(Error::invalid(format!(
                "gain importance needs a boosted tree model, got {}",
                model.algorithm()
            )))
        }
    };
    let sum: f64 = totals.iter().sum();
    let no_splits = !(sum > 0.0);
    let scores: Vec<f64> = if no_splits {
        vec![0.0; p]
    } else {
        totals.iter().map(|g| g / sum).collect()
    };
    let mut report = ImportanceReport::new(method, feature_names, scores, totals, vec![0.0; p], 1);
    report.no_splits = no_splits;
    Ok(report)
}

/// Features ordered by descending score, ties by name.
pub fn rank_contributors(report: &ImportanceReport) -> Vec<String> {
    let mut e: Vec<&FeatureScore> = report.entries.iter().collect();
    e.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.feature.cmp(&b.feature)));
    e.into_iter().map(|f| f.feature.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(scores: &[(&str, f64)]) -> ImportanceReport {
        let names: Vec<String> = scores.iter().map(|s| s.0.to_string()).collect();
        let v: Vec<f64> = scores.iter().map(|s| s.1).collect();
        ImportanceReport::new(ImportanceMethod::GainNewton, &names, v.clone(), v, vec![0.0; names.len()], 1)
    }

    #[test]
    fn contributors_descend_with_name_ties() {
        assert_eq!(rank_contributors(&report(&[("b", 0.3), ("a", 0.5), ("c", 0.2)])), vec!["a", "b", "c"]);
        assert_eq!(rank_contributors(&report(&[("b", 0.5), ("a", 0.5)])), vec!["a", "b"]);
    }

    #[test]
    fn ranks_share_minimum() {
        let r = report(&[("a", 0.4), ("b", 0.4), ("c", 0.2)]);
        let ranks: Vec<usize> = r.entries.iter().map(|e| e.rank).collect();
        assert_eq!(ranks, vec![1, 1, 3]);
    }
}
