//! The three-way split protocol: base fits on d1, combiner fits on d2,
//! refit on d1 ∪ d2 and evaluation on d3.

pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::ensemble::{self, CombinerSpec, FittedCombiner, PredictionMatrix};
use crate::error::{Error, Result};
use crate::evaluation::{self, Direction};
use crate::geo::{assemble_features, DropReport, FeatureTable, GridProduct, Observation, PredictorSetId, RowKey, Station};
use crate::importance::{self, ImportanceReport};
use crate::learners::{self, Algorithm, FittedRegressor, Hyperparameters, RegressorSpec};

pub use synth::{generate_synthetic, ProductDistortion, SyntheticData, SyntheticSpec};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;

/// Row indices of the three datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub d1: Vec<usize>,
    pub d2: Vec<usize>,
    pub d3: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn n_rows(&self) -> usize {
        self.d1.len() + self.d2.len() + self.d3.len()
    }

    /// d1 followed by d2.
    pub fn d12(&self) -> Vec<usize> {
        self.d1.iter().chain(&self.d2).copied().collect()
    }
}

/// Seeded random split of `0..n` into thirds; the `n % 3` extra rows go to
/// d1, then d2.
pub fn split_three(n: usize, seed: u64) -> Result<SplitPlan> {
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 rows to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / 3;
    let rem = n % 3;
    let n1 = base + usize::from(rem >= 1);
    let n2 = base + usize::from(rem >= 2);
    let d3 = idx.split_off(n1 + n2);
    let d2 = idx.split_off(n1);
    Ok(SplitPlan { d1: idx, d2, d3, seed })
}

/// Stable 64-bit tag of a learner name (FNV-1a).
pub fn learner_tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn learner_seed(master: u64, name: &str) -> u64 {
    master ^ learner_tag(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub predictor_sets: Vec<PredictorSetId>,
    /// Hyperparameters of the six base learners, in prediction-matrix order.
    /// Stackers whose meta-learner is one of them reuse these settings.
    pub base_learners: Vec<Hyperparameters>,
    pub combiners: Vec<CombinerSpec>,
    pub seed: u64,
    /// Clamp every prediction below at 0 mm.
    pub clip_at_zero: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            predictor_sets: PredictorSetId::ALL.to_vec(),
            base_learners: Algorithm::BASE.iter().map(|a| Hyperparameters::defaults(*a)).collect(),
            combiners: CombinerSpec::all(),
            seed: DEFAULT_SEED,
            clip_at_zero: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.predictor_sets.is_empty() {
            return Err(Error::invalid("no predictor set requested"));
        }
        let distinct: HashSet<_> = self.predictor_sets.iter().collect();
        if distinct.len() != self.predictor_sets.len() {
            return Err(Error::invalid("duplicate predictor set"));
        }
        let order: Vec<Algorithm> = self.base_learners.iter().map(Hyperparameters::algorithm).collect();
        if order != Algorithm::BASE {
            return Err(Error::invalid(format!(
                "base learners must be exactly {:?} in this order",
                Algorithm::BASE.map(Algorithm::name)
            )));
        }
        let mut want = CombinerSpec::all();
        let mut got = self.combiners.clone();
        want.sort();
        got.sort();
        if want != got {
            return Err(Error::invalid("combiners must be the eleven standard combiners, each once"));
        }
        Ok(())
    }

    pub fn base_spec(&self, j: usize) -> RegressorSpec {
        let hp = self.base_learners[j].clone();
        let name = hp.algorithm().name();
        RegressorSpec {
            hyperparameters: hp,
            seed: learner_seed(self.seed, name),
        }
    }

    pub fn meta_spec(&self, meta: Algorithm) -> RegressorSpec {
        let hp = self
            .base_learners
            .iter()
            .find(|h| h.algorithm() == meta)
            .cloned()
            .unwrap_or_else(|| Hyperparameters::defaults(meta));
        RegressorSpec {
            hyperparameters: hp,
            seed: learner_seed(self.seed, &CombinerSpec::Stack(meta).name()),
        }
    }

    /// Names and seeds of all learners that consume randomness.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        for j in 0..self.base_learners.len() {
            let s = self.base_spec(j);
            m.insert(s.algorithm().name().to_string(), s.seed);
        }
        for c in &self.combiners {
            if let CombinerSpec::Stack(a) = c {
                m.insert(c.name(), self.meta_spec(*a).seed);
            }
        }
        m
    }
}

/// Fitting stages at which training rows are touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    BaseD1,
    Selection,
    Meta,
    BaseD12,
}

/// One training access, reported to a [`FitProbe`].
#[derive(Debug, Clone, Copy)]
pub struct FitEvent<'a> {
    pub set: PredictorSetId,
    pub stage: Stage,
    pub learner: &'a str,
    /// Row indices into the feature table whose targets or features were read.
    pub rows: &'a [usize],
}

/// Observer of every training access made by [`run_experiment_with`].
pub trait FitProbe: Sync {
    fn record(&self, event: FitEvent<'_>);
}

/// Probe that ignores everything.
pub struct NoProbe;

impl FitProbe for NoProbe {
    fn record(&self, _: FitEvent<'_>) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Base,
    Combiner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerResult {
    pub learner: String,
    pub kind: LearnerKind,
    pub predictor_set: PredictorSetId,
    pub mse: f64,
    pub mdse: f64,
    /// Percent improvement over MARS in the same set; absent when that
    /// benchmark has zero MSE.
    pub rs_type1: Option<f64>,
    /// Percent improvement over MARS in set 1; absent when set 1 was not run
    /// or its MARS has zero MSE.
    pub rs_type2: Option<f64>,
    pub rank_type1: usize,
    pub rank_type2: usize,
    /// Wall-clock fit plus predict time, base fitting included for combiners.
    pub seconds: f64,
}

/// In-run quantities computed on d2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDiagnostics {
    pub predictor_set: PredictorSetId,
    pub n_d1: usize,
    pub n_d2: usize,
    pub n_d3: usize,
    /// Base-learner MSE on d2 (models fitted on d1), in column order.
    pub base_mse_d2: BTreeMap<String, f64>,
    pub mean_mse_d2: f64,
    pub median_mse_d2: f64,
    /// In-sample d2 MSE of every stacker.
    pub stack_mse_d2: BTreeMap<String, f64>,
    pub selected_best_mse: String,
    pub selected_best_mdse: String,
    pub stack_lr_rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub software_version: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub n_rows: usize,
    pub drops: BTreeMap<PredictorSetId, DropReport>,
    pub results: Vec<LearnerResult>,
    pub diagnostics: Vec<SetDiagnostics>,
    /// Degenerate-case notes, e.g. `zero_benchmark_type1:set1`.
    pub flags: Vec<String>,
}

impl ExperimentReport {
    pub fn result(&self, learner: &str, set: PredictorSetId) -> Option<&LearnerResult> {
        self.results
            .iter()
            .find(|r| r.learner == learner && r.predictor_set == set)
    }

    pub fn set_results(&self, set: PredictorSetId) -> impl Iterator<Item = &LearnerResult> {
        self.results.iter().filter(move |r| r.predictor_set == set)
    }

    pub fn diagnostics_for(&self, set: PredictorSetId) -> Option<&SetDiagnostics> {
        self.diagnostics.iter().find(|d| d.predictor_set == set)
    }

    /// Lowest d3 MSE over the learners of one set.
    pub fn best_mse(&self, set: PredictorSetId) -> Option<f64> {
        self.set_results(set).map(|r| r.mse).min_by(f64::total_cmp)
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for x in &mut r.results {
            x.seconds = 0.0;
        }
        r
    }

    pub fn has_zero_benchmark(&self) -> bool {
        self.flags.iter().any(|f| f.starts_with("zero_benchmark"))
    }
}

/// d3 predictions kept from one predictor set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetOutputs {
    pub predictor_set: PredictorSetId,
    pub truth_d3: Vec<f64>,
    pub base_d3: PredictionMatrix,
    pub combined_d3: Vec<(CombinerSpec, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub split: SplitPlan,
    pub outputs: Vec<SetOutputs>,
}

/// Rows of all tables must carry the same keys in the same order.
fn common_universe(features: &BTreeMap<PredictorSetId, FeatureTable>, sets: &[PredictorSetId]) -> Result<usize> {
    let mut reference: Option<(PredictorSetId, Vec<RowKey>)> = None;
    for set in sets {
        let table = features
            .get(set)
            .ok_or_else(|| Error::invalid(format!("no feature table supplied for {set}")))?;
        if table.set != *set {
            return Err(Error::invalid(format!("table supplied for {set} was built for {}", table.set)));
        }
        let keys = table.keys();
        match &reference {
            None => reference = Some((*set, keys)),
            Some((first, k)) if *k != keys => {
                return Err(Error::invalid(format!(
                    "row universe of {set} differs from {first}; assemble sets over common rows"
                )))
            }
            _ => {}
        }
    }
    Ok(reference.map_or(0, |(_, k)| k.len()))
}

fn clip(mut v: Vec<f64>, on: bool) -> Vec<f64> {
    if on {
        for x in &mut v {
            *x = x.max(0.0);
        }
    }
    v
}

fn gather(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// The only place training matrices are cut out of a table.
#[allow(clippy::too_many_arguments)]
fn train(
    probe: &dyn FitProbe,
    set: PredictorSetId,
    stage: Stage,
    spec: &RegressorSpec,
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
) -> Result<FittedRegressor> {
    probe.record(FitEvent {
        set,
        stage,
        learner: spec.algorithm().name(),
        rows,
    });
    learners::fit(spec, &x.select_rows(rows), &gather(y, rows))
}

struct BaseStage {
    preds: PredictionMatrix,
    seconds: Vec<f64>,
}

fn base_stage(
    config: &ExperimentConfig,
    probe: &dyn FitProbe,
    set: PredictorSetId,
    stage: Stage,
    x: &Matrix,
    y: &[f64],
    train_rows: &[usize],
    predict_rows: &[usize],
) -> Result<BaseStage> {
    let x_pred = x.select_rows(predict_rows);
    let fitted: Vec<(Vec<f64>, f64)> = (0..config.base_learners.len())
        .into_par_iter()
        .map(|j| {
            let spec = config.base_spec(j);
            let t = Instant::now();
            let model = train(probe, set, stage, &spec, x, y, train_rows)?;
            let p = clip(model.predict(&x_pred)?, config.clip_at_zero);
            let secs = t.elapsed().as_secs_f64();
            debug!("{set} {:?} {} fitted in {secs:.2}s", stage, spec.algorithm());
            Ok((p, secs))
        })
        .collect::<Result<_>>()?;
    let (cols, seconds): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    Ok(BaseStage {
        preds: PredictionMatrix::new(cols)?,
        seconds,
    })
}

struct SetRun {
    results: Vec<LearnerResult>,
    diagnostics: SetDiagnostics,
    outputs: SetOutputs,
}

fn run_set(
    table: &FeatureTable,
    plan: &SplitPlan,
    config: &ExperimentConfig,
    probe: &dyn FitProbe,
) -> Result<SetRun> {
    let set = table.set;
    let x = table.matrix();
    let y = table.targets();
    let truth_d2 = gather(&y, &plan.d2);
    let truth_d3 = gather(&y, &plan.d3);
    let d12 = plan.d12();

    info!("{set}: fitting base learners on d1 ({} rows)", plan.d1.len());
    let stage1 = base_stage(config, probe, set, Stage::BaseD1, &x, &y, &plan.d1, &plan.d2)?;

    info!("{set}: fitting combiners on d2 ({} rows)", plan.d2.len());
    let trained: Vec<(FittedCombiner, f64)> = config
        .combiners
        .par_iter()
        .map(|c| {
            let t = Instant::now();
            let fitted = match c {
                CombinerSpec::Mean | CombinerSpec::Median => ensemble::fit_combiner(*c, None, &stage1.preds, &truth_d2)?,
                CombinerSpec::Best(_) => {
                    probe.record(FitEvent {
                        set,
                        stage: Stage::Selection,
                        learner: &c.name(),
                        rows: &plan.d2,
                    });
                    ensemble::fit_combiner(*c, None, &stage1.preds, &truth_d2)?
                }
                CombinerSpec::Stack(a) => {
                    let meta = config.meta_spec(*a);
                    probe.record(FitEvent {
                        set,
                        stage: Stage::Meta,
                        learner: &c.name(),
                        rows: &plan.d2,
                    });
                    ensemble::fit_combiner(*c, Some(&meta), &stage1.preds, &truth_d2)?
                }
            };
            Ok((fitted, t.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;

    info!("{set}: refitting base learners on d1+d2 ({} rows)", d12.len());
    let stage2 = base_stage(config, probe, set, Stage::BaseD12, &x, &y, &d12, &plan.d3)?;

    let names: Vec<String> = Algorithm::BASE.iter().map(|a| a.name().to_string()).collect();
    let mut diag = SetDiagnostics {
        predictor_set: set,
        n_d1: plan.d1.len(),
        n_d2: plan.d2.len(),
        n_d3: plan.d3.len(),
        base_mse_d2: BTreeMap::new(),
        mean_mse_d2: evaluation::mse(&clip(ensemble::combine_mean(&stage1.preds)?, config.clip_at_zero), &truth_d2)?,
        median_mse_d2: evaluation::mse(
            &clip(ensemble::combine_median(&stage1.preds)?, config.clip_at_zero),
            &truth_d2,
        )?,
        stack_mse_d2: BTreeMap::new(),
        selected_best_mse: String::new(),
        selected_best_mdse: String::new(),
        stack_lr_rank_deficient: false,
    };
    for (j, n) in names.iter().enumerate() {
        diag.base_mse_d2.insert(n.clone(), evaluation::mse(stage1.preds.column(j), &truth_d2)?);
    }

    let base_total_d12: f64 = stage2.seconds.iter().sum();
    let base_total_all: f64 = base_total_d12 + stage1.seconds.iter().sum::<f64>();

    let mut scored: Vec<(String, LearnerKind, Vec<f64>, f64)> = Vec::with_capacity(17);
    for (j, n) in names.iter().enumerate() {
        scored.push((n.clone(), LearnerKind::Base, stage2.preds.column(j).to_vec(), stage2.seconds[j]));
    }
    let mut combined = Vec::with_capacity(trained.len());
    for (fitted, fit_secs) in &trained {
        let t = Instant::now();
        let p = clip(ensemble::predict_combiner(fitted, &stage2.preds)?, config.clip_at_zero);
        let predict_secs = t.elapsed().as_secs_f64();
        let seconds = if fitted.spec.is_simple() {
            base_total_d12 + predict_secs
        } else {
            base_total_all + fit_secs + predict_secs
        };
        match (&fitted.spec, &fitted.state) {
            (CombinerSpec::Best(c), ensemble::CombinerState::Selected(j)) => {
                let n = names[*j].clone();
                match c {
                    ensemble::SelectionCriterion::Mse => diag.selected_best_mse = n,
                    ensemble::SelectionCriterion::Mdse => diag.selected_best_mdse = n,
                }
            }
            (CombinerSpec::Stack(a), ensemble::CombinerState::Meta(m)) => {
                let in_sample = clip(ensemble::predict_combiner(fitted, &stage1.preds)?, config.clip_at_zero);
                diag.stack_mse_d2.insert(fitted.spec.name(), evaluation::mse(&in_sample, &truth_d2)?);
                if *a == Algorithm::Lr {
                    diag.stack_lr_rank_deficient = m.meta.rank_deficient;
                }
            }
            _ => {}
        }
        scored.push((fitted.spec.name(), LearnerKind::Combiner, p.clone(), seconds));
        combined.push((fitted.spec, p));
    }

    let results = scored
        .into_iter()
        .map(|(learner, kind, p, seconds)| {
            Ok(LearnerResult {
                learner,
                kind,
                predictor_set: set,
                mse: evaluation::mse(&p, &truth_d3)?,
                mdse: evaluation::mdse(&p, &truth_d3)?,
                rs_type1: None,
                rs_type2: None,
                rank_type1: 0,
                rank_type2: 0,
                seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SetRun {
        results,
        diagnostics: diag,
        outputs: SetOutputs {
            predictor_set: set,
            truth_d3,
            base_d3: stage2.preds,
            combined_d3: combined,
        },
    })
}

/// Fills skill scores and ranks in place; returns degenerate-case flags.
fn score_results(results: &mut [LearnerResult], sets: &[PredictorSetId]) -> Result<Vec<String>> {
    let mut flags = Vec::new();
    let mars = Algorithm::Mars.name();
    let bench = |results: &[LearnerResult], set| {
        results
            .iter()
            .find(|r| r.learner == mars && r.predictor_set == set)
            .map(|r| r.mse)
    };

    let type2 = bench(results, PredictorSetId::Set1);
    match type2 {
        None => flags.push("type2_benchmark_unavailable".to_string()),
        Some(b) if b <= 0.0 => flags.push("zero_benchmark_type2".to_string()),
        _ => {}
    }

    for &set in sets {
        let b1 = bench(results, set).ok_or_else(|| Error::invalid("MARS missing from results"))?;
        if b1 <= 0.0 {
            flags.push(format!("zero_benchmark_type1:{set}"));
        }
        let idx: Vec<usize> = (0..results.len()).filter(|&i| results[i].predictor_set == set).collect();
        let scores: BTreeMap<usize, f64> = idx.iter().map(|&i| (i, results[i].mse)).collect();
        let ranks = evaluation::rank_learners(&scores, Direction::LowerIsBetter)?;
        for &i in &idx {
            let r = &mut results[i];
            r.rank_type1 = ranks[&i];
            r.rs_type1 = if b1 > 0.0 { Some(evaluation::skill_score(r.mse, b1)?) } else { None };
            r.rs_type2 = match type2 {
                Some(b2) if b2 > 0.0 => Some(evaluation::skill_score(r.mse, b2)?),
                _ => None,
            };
        }
    }

    let all: BTreeMap<usize, f64> = results.iter().enumerate().map(|(i, r)| (i, r.mse)).collect();
    let ranks = evaluation::rank_learners(&all, Direction::LowerIsBetter)?;
    for (i, r) in results.iter_mut().enumerate() {
        r.rank_type2 = ranks[&i];
    }
    Ok(flags)
}

/// Runs the full protocol on every configured predictor set.
pub fn run_experiment(
    features: &BTreeMap<PredictorSetId, FeatureTable>,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    Ok(run_experiment_with(features, config, &NoProbe)?.report)
}

/// [`run_experiment`] that also returns the split, the d3 predictions, and
/// reports every training access to `probe`.
pub fn run_experiment_with(
    features: &BTreeMap<PredictorSetId, FeatureTable>,
    config: &ExperimentConfig,
    probe: &dyn FitProbe,
) -> Result<ExperimentRun> {
    config.validate()?;
    let n = common_universe(features, &config.predictor_sets)?;
    let plan = split_three(n, config.seed)?;

    let mut results = Vec::new();
    let mut diagnostics = Vec::new();
    let mut outputs = Vec::new();
    let mut drops = BTreeMap::new();
    for set in &config.predictor_sets {
        let table = &features[set];
        let run = run_set(table, &plan, config, probe)?;
        results.extend(run.results);
        diagnostics.push(run.diagnostics);
        outputs.push(run.outputs);
        drops.insert(*set, table.drops.clone());
    }
    let flags = score_results(&mut results, &config.predictor_sets)?;

    Ok(ExperimentRun {
        report: ExperimentReport {
            format_version: REPORT_FORMAT_VERSION,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds: config.seeds(),
            n_rows: n,
            drops,
            results,
            diagnostics,
            flags,
        },
        split: plan,
        outputs,
    })
}

/// Builds each requested set and restricts all of them to the rows present
/// in every set.
pub fn assemble_sets(
    stations: &[Station],
    observations: &[Observation],
    products: &[GridProduct],
    sets: &[PredictorSetId],
) -> Result<BTreeMap<PredictorSetId, FeatureTable>> {
    let mut tables = BTreeMap::new();
    for &set in sets {
        tables.insert(set, assemble_features(stations, observations, products, set)?);
    }
    let mut common: Option<HashSet<RowKey>> = None;
    for t in tables.values() {
        let keys: HashSet<RowKey> = t.keys().into_iter().collect();
        common = Some(match common {
            None => keys,
            Some(c) => c.intersection(&keys).cloned().collect(),
        });
    }
    if let Some(common) = common {
        for t in tables.values_mut() {
            t.restrict_to(&common);
        }
    }
    Ok(tables)
}

/// Importance of base-learner predictions (per set) and of the set-3
/// predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceStudy {
    pub format_version: u32,
    pub seed: u64,
    pub repeats: usize,
    pub base_learners: Vec<ContributionReport>,
    pub predictors: Option<ContributionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub predictor_set: PredictorSetId,
    /// What the features are: `base_predictions` or `predictors`.
    pub subject: String,
    pub permutation: ImportanceReport,
    pub gain: ImportanceReport,
}

/// Base-learner contributions use the d2 predictions of the d1-fitted base
/// learners, explained by RF and XGBoost meta-learners fitted on d2.
/// Predictor importance fits RF and XGBoost on d1 ∪ d2 of set 3.
pub fn run_importance(
    features: &BTreeMap<PredictorSetId, FeatureTable>,
    config: &ExperimentConfig,
    repeats: usize,
) -> Result<ImportanceStudy> {
    config.validate()?;
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let n = common_universe(features, &config.predictor_sets)?;
    let plan = split_three(n, config.seed)?;
    let rf = config.meta_spec(Algorithm::Rf);
    let xgb = config.meta_spec(Algorithm::Xgb);

    let mut base_learners = Vec::new();
    for set in &config.predictor_sets {
        let table = &features[set];
        let (x, y) = (table.matrix(), table.targets());
        info!("{set}: base-learner importance");
        let stage1 = base_stage(config, &NoProbe, *set, Stage::BaseD1, &x, &y, &plan.d1, &plan.d2)?;
        let truth = gather(&y, &plan.d2);
        let px = stage1.preds.to_matrix();
        let names = stage1.preds.feature_names();
        let rf_model = learners::fit(&rf, &px, &truth)?;
        let xgb_model = learners::fit(&xgb, &px, &truth)?;
        base_learners.push(ContributionReport {
            predictor_set: *set,
            subject: "base_predictions".into(),
            permutation: importance::permutation_importance(&rf_model, &px, &truth, &names, repeats, config.seed)?,
            gain: importance::gain_importance(&xgb_model, &names)?,
        });
    }

    let predictors = match features.get(&PredictorSetId::Set3) {
        Some(table) if config.predictor_sets.contains(&PredictorSetId::Set3) => {
            info!("set3: predictor importance");
            let d12 = plan.d12();
            let (x, y) = (table.matrix().select_rows(&d12), gather(&table.targets(), &d12));
            let rf_model = learners::fit(&RegressorSpec { seed: learner_seed(config.seed, "RF"), ..rf.clone() }, &x, &y)?;
            let xgb_model = learners::fit(&RegressorSpec { seed: learner_seed(config.seed, "XGBoost"), ..xgb.clone() }, &x, &y)?;
            Some(ContributionReport {
                predictor_set: PredictorSetId::Set3,
                subject: "predictors".into(),
                permutation: importance::permutation_importance(&rf_model, &x, &y, &table.feature_names, repeats, config.seed)?,
                gain: importance::gain_importance(&xgb_model, &table.feature_names)?,
            })
        }
        _ => None,
    };

    Ok(ImportanceStudy {
        format_version: REPORT_FORMAT_VERSION,
        seed: config.seed,
        repeats,
        base_learners,
        predictors,
    })
}
