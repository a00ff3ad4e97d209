//! The eleven combiners: mean, median, two best-learner selectors and seven
//! stacking variants.
//!
//! Stacking meta-learners see only the six base-learner prediction columns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{median, stable_mean, Matrix};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::learners::{self, Algorithm, FittedRegressor, RegressorSpec};

/// One prediction column per base learner, in [`Algorithm::BASE`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    learners: Vec<Algorithm>,
    columns: Vec<Vec<f64>>,
}

impl PredictionMatrix {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_order(Algorithm::BASE.to_vec(), columns)
    }

    pub fn with_order(learners: Vec<Algorithm>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != Algorithm::BASE.len() || learners.len() != columns.len() {
            return Err(Error::invalid(format!(
                "prediction matrix needs exactly {} columns, got {}",
                Algorithm::BASE.len(),
                columns.len()
            )));
        }
        let n = columns[0].len();
        if n == 0 {
            return Err(Error::Empty("prediction matrix"));
        }
        for c in &columns {
            if c.len() != n {
                return Err(Error::LengthMismatch { left: c.len(), right: n });
            }
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("prediction matrix"));
            }
        }
        Ok(Self { learners, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn learners(&self) -> &[Algorithm] {
        &self.learners
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_columns(&self.columns).expect("columns validated")
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.learners.iter().map(|a| a.name().to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SelectionCriterion {
    Mse,
    Mdse,
}

/// Serialized by name, e.g. `"stack_LR"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CombinerSpec {
    Mean,
    Median,
    Best(SelectionCriterion),
    Stack(Algorithm),
}

impl CombinerSpec {
    /// All eleven combiners in report order.
    pub fn all() -> Vec<CombinerSpec> {
        let mut v = vec![
            CombinerSpec::Mean,
            CombinerSpec::Median,
            CombinerSpec::Best(SelectionCriterion::Mse),
            CombinerSpec::Best(SelectionCriterion::Mdse),
        ];
        v.extend(Algorithm::META.into_iter().map(CombinerSpec::Stack));
        v
    }

    pub fn name(&self) -> String {
        match self {
            CombinerSpec::Mean => "mean".into(),
            CombinerSpec::Median => "median".into(),
            CombinerSpec::Best(SelectionCriterion::Mse) => "best_MSE".into(),
            CombinerSpec::Best(SelectionCriterion::Mdse) => "best_MdSE".into(),
            CombinerSpec::Stack(a) => format!("stack_{}", a.name()),
        }
    }

    pub fn is_simple(&self) -> bool {
        matches!(self, CombinerSpec::Mean | CombinerSpec::Median)
    }
}

impl fmt::Display for CombinerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl From<CombinerSpec> for String {
    fn from(c: CombinerSpec) -> String {
        c.name()
    }
}

impl TryFrom<String> for CombinerSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for CombinerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CombinerSpec::all()
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown combiner {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CombinerState {
    Untrained,
    Selected(usize),
    Meta(Box<FittedRegressor>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCombiner {
    pub spec: CombinerSpec,
    pub learners: Vec<Algorithm>,
    pub state: CombinerState,
}

fn sorted_row(preds: &PredictionMatrix, i: usize) -> Vec<f64> {
    let mut r = preds.row(i);
    r.sort_by(f64::total_cmp);
    r
}

/// Row-wise arithmetic mean of the base predictions.
pub fn combine_mean(preds: &PredictionMatrix) -> Result<Vec<f64>> {
    Ok((0..preds.n_rows())
        .map(|i| {
            let r = sorted_row(preds, i);
            let (lo, hi) = (r[0], r[r.len() - 1]);
            stable_mean(r).clamp(lo, hi)
        })
        .collect())
}

/// Row-wise median of the base predictions.
pub fn combine_median(preds: &PredictionMatrix) -> Result<Vec<f64>> {
    Ok((0..preds.n_rows()).map(|i| median(&preds.row(i))).collect())
}

/// Column index with the lowest criterion on `truth`; ties go to the lower index.
pub fn select_best(preds: &PredictionMatrix, truth: &[f64], criterion: SelectionCriterion) -> Result<usize> {
    if truth.len() != preds.n_rows() {
        return Err(Error::LengthMismatch {
            left: preds.n_rows(),
            right: truth.len(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for (j, col) in preds.columns().iter().enumerate() {
        let score = match criterion {
            SelectionCriterion::Mse => evaluation::mse(col, truth)?,
            SelectionCriterion::Mdse => evaluation::mdse(col, truth)?,
        };
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((j, score));
        }
    }
    Ok(best.expect("six columns").0)
}

/// Trains a meta-learner on the six prediction columns.
pub fn fit_stacker(meta: &RegressorSpec, preds: &PredictionMatrix, truth: &[f64]) -> Result<FittedCombiner> {
    if truth.len() != preds.n_rows() {
        return Err(Error::LengthMismatch {
            left: preds.n_rows(),
            right: truth.len(),
        });
    }
    let model = learners::fit(meta, &preds.to_matrix(), truth)?;
    Ok(FittedCombiner {
        spec: CombinerSpec::Stack(meta.algorithm()),
        learners: preds.learners().to_vec(),
        state: CombinerState::Meta(Box::new(model)),
    })
}

/// Fits any combiner. `meta_spec` supplies the meta-learner configuration for
/// stacking and is ignored otherwise.
pub fn fit_combiner(
    spec: CombinerSpec,
    meta_spec: Option<&RegressorSpec>,
    preds: &PredictionMatrix,
    truth: &[f64],
) -> Result<FittedCombiner> {
    let state = match spec {
        CombinerSpec::Mean | CombinerSpec::Median => CombinerState::Untrained,
        CombinerSpec::Best(c) => CombinerState::Selected(select_best(preds, truth, c)?),
        CombinerSpec::Stack(a) => {
            let default_spec;
            let meta = match meta_spec {
                Some(m) => m,
                None => {
                    default_spec = RegressorSpec::new(a, 0);
                    &default_spec
                }
            };
            if meta.algorithm() != a {
                return Err(Error::invalid(format!(
                    "meta-learner {} does not match combiner {}",
                    meta.algorithm(),
                    spec
                )));
            }
            return fit_stacker(meta, preds, truth);
        }
    };
    Ok(FittedCombiner {
        spec,
        learners: preds.learners().to_vec(),
        state,
    })
}

pub fn predict_combiner(combiner: &FittedCombiner, preds: &PredictionMatrix) -> Result<Vec<f64>> {
    if combiner.learners != preds.learners() {
        return Err(Error::invalid(
            "prediction matrix column order differs from the order used at fit time",
        ));
    }
    match (&combiner.spec, &combiner.state) {
        (CombinerSpec::Mean, _) => combine_mean(preds),
        (CombinerSpec::Median, _) => combine_median(preds),
        (CombinerSpec::Best(_), CombinerState::Selected(j)) => {
            let col = preds
                .columns()
                .get(*j)
                .ok_or_else(|| Error::invalid(format!("selected column {j} out of range")))?;
            Ok(col.clone())
        }
        (CombinerSpec::Stack(_), CombinerState::Meta(m)) => m.predict(&preds.to_matrix()),
        (spec, _) => Err(Error::invalid(format!("combiner {spec} is not fitted"))),
    }
}
