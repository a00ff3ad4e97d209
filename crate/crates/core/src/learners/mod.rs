//! The seven regression algorithms behind one fit/predict interface.

pub mod boosting;
pub mod brnn;
pub mod forest;
pub mod linear;
pub mod mars;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use self::boosting::{GbmParams, GradientBoosting, NewtonBoosting, XgbParams};
use self::brnn::{BrnnModel, BrnnParams};
use self::forest::{ForestParams, RandomForest};
use self::linear::LinearModel;
use self::mars::{MarsParams, SplineModel, SplineVariant};
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::geo::FeatureTable;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "MARS")]
    Mars,
    #[serde(rename = "polyMARS")]
    PolyMars,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "GBM")]
    Gbm,
    #[serde(rename = "XGBoost")]
    Xgb,
    #[serde(rename = "BRNN")]
    Brnn,
}

impl Algorithm {
    /// Base learners in prediction-matrix column order.
    pub const BASE: [Algorithm; 6] = [
        Algorithm::Mars,
        Algorithm::PolyMars,
        Algorithm::Rf,
        Algorithm::Gbm,
        Algorithm::Xgb,
        Algorithm::Brnn,
    ];

    /// Meta-learners available to the stacking combiners.
    pub const META: [Algorithm; 7] = [
        Algorithm::Lr,
        Algorithm::Mars,
        Algorithm::PolyMars,
        Algorithm::Rf,
        Algorithm::Gbm,
        Algorithm::Xgb,
        Algorithm::Brnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Lr => "LR",
            Algorithm::Mars => "MARS",
            Algorithm::PolyMars => "polyMARS",
            Algorithm::Rf => "RF",
            Algorithm::Gbm => "GBM",
            Algorithm::Xgb => "XGBoost",
            Algorithm::Brnn => "BRNN",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::META
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", content = "params")]
pub enum Hyperparameters {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "MARS")]
    Mars(MarsParams),
    #[serde(rename = "polyMARS")]
    PolyMars(MarsParams),
    #[serde(rename = "RF")]
    Rf(ForestParams),
    #[serde(rename = "GBM")]
    Gbm(GbmParams),
    #[serde(rename = "XGBoost")]
    Xgb(XgbParams),
    #[serde(rename = "BRNN")]
    Brnn(BrnnParams),
}

impl Hyperparameters {
    pub fn defaults(algorithm: Algorithm) -> Self {
        match algorithm {
            Algorithm::Lr => Self::Lr,
            Algorithm::Mars => Self::Mars(MarsParams::default()),
            Algorithm::PolyMars => Self::PolyMars(MarsParams::default()),
            Algorithm::Rf => Self::Rf(ForestParams::default()),
            Algorithm::Gbm => Self::Gbm(GbmParams::default()),
            Algorithm::Xgb => Self::Xgb(XgbParams::default()),
            Algorithm::Brnn => Self::Brnn(BrnnParams::default()),
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Self::Lr => Algorithm::Lr,
            Self::Mars(_) => Algorithm::Mars,
            Self::PolyMars(_) => Algorithm::PolyMars,
            Self::Rf(_) => Algorithm::Rf,
            Self::Gbm(_) => Algorithm::Gbm,
            Self::Xgb(_) => Algorithm::Xgb,
            Self::Brnn(_) => Algorithm::Brnn,
        }
    }
}

/// Declarative configuration of one regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
}

impl RegressorSpec {
    pub fn new(algorithm: Algorithm, seed: u64) -> Self {
        Self {
            hyperparameters: Hyperparameters::defaults(algorithm),
            seed,
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.hyperparameters.algorithm()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            hyperparameters: self.hyperparameters.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Linear(LinearModel),
    Spline(SplineModel),
    Forest(RandomForest),
    Gbm(GradientBoosting),
    Xgb(NewtonBoosting),
    Brnn(BrnnModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub n_rows: usize,
    pub n_features: usize,
    pub fit_seconds: f64,
    /// Set when a least-squares solve fell back to the pseudoinverse.
    pub rank_deficient: bool,
}

/// A trained, immutable regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor {
    pub spec: RegressorSpec,
    pub model: Model,
    pub meta: FitMetadata,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    regressor: FittedRegressor,
}

fn check_finite(x: &Matrix, what: &'static str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Trains `spec` on rows of `x` with targets `y`.
pub fn fit(spec: &RegressorSpec, x: &Matrix, y: &[f64]) -> Result<FittedRegressor> {
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y.len() });
    }
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 training rows, got {n}")));
    }
    check_finite(x, "training features")?;
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("training targets"));
    }
    let start = Instant::now();
    let mut rank_deficient = false;
    let model = match &spec.hyperparameters {
        Hyperparameters::Lr => {
            let m = linear::least_squares(x, y)?;
            rank_deficient = m.rank_deficient;
            Model::Linear(m)
        }
        Hyperparameters::Mars(p) => Model::Spline(mars::fit(x, y, p, SplineVariant::Mars)?),
        Hyperparameters::PolyMars(p) => Model::Spline(mars::fit(x, y, p, SplineVariant::PolyMars)?),
        Hyperparameters::Rf(p) => Model::Forest(RandomForest::fit(x, y, p, spec.seed)),
        Hyperparameters::Gbm(p) => Model::Gbm(GradientBoosting::fit(x, y, p, spec.seed)),
        Hyperparameters::Xgb(p) => Model::Xgb(NewtonBoosting::fit(x, y, p, spec.seed)),
        Hyperparameters::Brnn(p) => Model::Brnn(BrnnModel::fit(x, y, p, spec.seed)?),
    };
    Ok(FittedRegressor {
        spec: spec.clone(),
        model,
        meta: FitMetadata {
            n_rows: n,
            n_features: x.n_cols(),
            fit_seconds: start.elapsed().as_secs_f64(),
            rank_deficient,
        },
    })
}

pub fn fit_table(spec: &RegressorSpec, table: &FeatureTable) -> Result<FittedRegressor> {
    fit(spec, &table.matrix(), &table.targets())
}

impl FittedRegressor {
    pub fn algorithm(&self) -> Algorithm {
        self.spec.algorithm()
    }

    pub fn n_features(&self) -> usize {
        self.meta.n_features
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.meta.n_features {
            return Err(Error::WidthMismatch {
                expected: self.meta.n_features,
                got: x.n_cols(),
            });
        }
        check_finite(x, "prediction features")?;
        let out: Vec<f64> = match &self.model {
            Model::Brnn(m) => m.predict(x),
            _ => x.rows().map(|r| self.predict_row_unchecked(r)).collect(),
        };
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("{} produced a non-finite prediction", self.algorithm())));
        }
        Ok(out)
    }

    fn predict_row_unchecked(&self, row: &[f64]) -> f64 {
        match &self.model {
            Model::Linear(m) => m.predict_row(row),
            Model::Spline(m) => m.predict_row(row),
            Model::Forest(m) => m.predict_row(row),
            Model::Gbm(m) => m.predict_row(row),
            Model::Xgb(m) => m.predict_row(row),
            Model::Brnn(m) => {
                let x = Matrix::from_rows(&[row]).expect("single row");
                m.predict(&x)[0]
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            regressor: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        Ok(doc.regressor)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
