mod common;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use common::rng;
use satblend::importance::*;
use satblend::learners::boosting::{GbmParams, XgbParams};
use satblend::learners::forest::ForestParams;
use satblend::learners::{self, Algorithm, Hyperparameters, RegressorSpec};
use satblend::Matrix;

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn rf(n_trees: usize, seed: u64) -> RegressorSpec {
    RegressorSpec {
        hyperparameters: Hyperparameters::Rf(ForestParams {
            n_trees,
            ..Default::default()
        }),
        seed,
    }
}

/// y = x1 + noise with x2 independent noise.
fn signal_and_noise(seed: u64, n: usize) -> (Matrix, Vec<f64>) {
    let mut r = rng(seed);
    let e = Normal::new(0.0, 0.3).unwrap();
    let rows: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]).collect();
    let y = rows.iter().map(|x| x[0] + e.sample(&mut r)).collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn signal_beats_noise_in_permutation_importance() {
    let mut wins = 0;
    for seed in 0..20 {
        let (x, y) = signal_and_noise(seed, 400);
        let m = learners::fit(&rf(60, seed), &x, &y).unwrap();
        let rep = permutation_importance(&m, &x, &y, &names(2), DEFAULT_REPEATS, seed).unwrap();
        if rep.entries[0].score > rep.entries[1].score {
            wins += 1;
        }
    }
    assert!(wins >= 19, "{wins}/20");
}

#[test]
fn constant_model_has_zero_importance() {
    let (x, _) = signal_and_noise(1, 100);
    let y = vec![3.0; 100];
    for a in [Algorithm::Lr, Algorithm::Rf, Algorithm::Xgb] {
        let m = learners::fit(&RegressorSpec::new(a, 0), &x, &y).unwrap();
        let rep = permutation_importance(&m, &x, &y, &names(2), 5, 0).unwrap();
        assert!(rep.entries.iter().all(|e| e.score == 0.0), "{a}");
    }
}

#[test]
fn duplicated_feature_shares_credit() {
    let (x, y) = signal_and_noise(2, 500);
    let single = learners::fit(&rf(100, 2), &x, &y).unwrap();
    let solo = permutation_importance(&single, &x, &y, &names(2), 10, 2).unwrap().entries[0].score;
    let dup = Matrix::from_columns(&[x.column(0), x.column(0), x.column(1)]).unwrap();
    let both = learners::fit(&rf(100, 2), &dup, &y).unwrap();
    let rep = permutation_importance(&both, &dup, &y, &names(3), 10, 2).unwrap();
    assert!(rep.entries[0].score <= solo, "{} vs {solo}", rep.entries[0].score);
    assert!(rep.entries[1].score <= solo, "{} vs {solo}", rep.entries[1].score);
}

#[test]
fn gain_fractions_sum_to_one_and_favor_strong_feature() {
    let mut r = rng(4);
    let rows: Vec<[f64; 3]> = (0..400)
        .map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
        .collect();
    let y: Vec<f64> = rows.iter().map(|x| x[0] + 0.1 * x[1]).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    for a in [Algorithm::Xgb, Algorithm::Gbm] {
        let m = learners::fit(&RegressorSpec::new(a, 4), &x, &y).unwrap();
        let rep = gain_importance(&m, &names(3)).unwrap();
        let total: f64 = rep.entries.iter().map(|e| e.score).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(rep.entries.iter().all(|e| e.score >= 0.0));
        assert!(rep.entries[0].score > rep.entries[1].score);
        assert_eq!(rank_contributors(&rep)[0], "x1");
    }
}

#[test]
fn single_split_gets_all_gain() {
    let x = Matrix::from_rows(&[[0.0, 5.0], [1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]).unwrap();
    let y = [0.0, 0.0, 1.0, 1.0];
    let spec = RegressorSpec {
        hyperparameters: Hyperparameters::Xgb(XgbParams {
            n_rounds: 1,
            max_depth: 1,
            ..Default::default()
        }),
        seed: 0,
    };
    let m = learners::fit(&spec, &x, &y).unwrap();
    let rep = gain_importance(&m, &names(2)).unwrap();
    assert_eq!(rep.entries[0].score, 1.0);
    assert_eq!(rep.entries[1].score, 0.0);
    assert_eq!(rep.method, ImportanceMethod::GainNewton);
}

#[test]
fn no_split_model_is_flagged() {
    let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
    let m = learners::fit(&RegressorSpec::new(Algorithm::Gbm, 0), &x, &[2.0, 2.0, 2.0]).unwrap();
    let rep = gain_importance(&m, &names(1)).unwrap();
    assert!(rep.no_splits);
    assert_eq!(rep.entries[0].score, 0.0);
    let lr = learners::fit(&RegressorSpec::new(Algorithm::Lr, 0), &x, &[1.0, 2.0, 3.0]).unwrap();
    assert!(gain_importance(&lr, &names(1)).is_err());
}

#[test]
fn unused_feature_stays_within_noise_bound() {
    let (x, y) = signal_and_noise(6, 300);
    let spec = RegressorSpec {
        hyperparameters: Hyperparameters::Gbm(GbmParams {
            n_trees: 5,
            max_depth: 1,
            ..Default::default()
        }),
        seed: 6,
    };
    let m = learners::fit(&spec, &x, &y).unwrap();
    let satblend::learners::Model::Gbm(g) = &m.model else { panic!() };
    assert!(g.trees.iter().all(|t| !t.uses_feature(1)));
    let rep = permutation_importance(&m, &x, &y, &names(2), 10, 6).unwrap();
    assert!(rep.entries[1].raw.abs() <= rep.noise_bound(1));
}

#[test]
fn truth_column_ranks_first_among_base_predictions() {
    let mut r = rng(8);
    let truth: Vec<f64> = (0..600).map(|_| r.random_range(0.0..100.0)).collect();
    let e = Normal::new(0.0, 15.0).unwrap();
    let mut cols: Vec<Vec<f64>> = (0..6).map(|_| truth.iter().map(|t| t + e.sample(&mut r)).collect()).collect();
    cols[2] = truth.clone();
    let x = Matrix::from_columns(&cols).unwrap();
    let names: Vec<String> = Algorithm::BASE.iter().map(|a| a.name().to_string()).collect();
    let rf_model = learners::fit(&rf(100, 8), &x, &truth).unwrap();
    let perm = permutation_importance(&rf_model, &x, &truth, &names, 10, 8).unwrap();
    assert_eq!(rank_contributors(&perm)[0], "RF");
    let xgb = learners::fit(&RegressorSpec::new(Algorithm::Xgb, 8), &x, &truth).unwrap();
    let gain = gain_importance(&xgb, &names).unwrap();
    assert_eq!(rank_contributors(&gain)[0], "RF");
}

#[test]
fn ranks_follow_scores_with_name_ties() {
    let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]]).unwrap();
    let m = learners::fit(&RegressorSpec::new(Algorithm::Lr, 0), &x, &[1.0, 1.0, 1.0, 1.0]).unwrap();
    let rep = permutation_importance(&m, &x, &[1.0, 1.0, 1.0, 1.0], &["b".into(), "a".into()], 3, 0).unwrap();
    assert_eq!(rank_contributors(&rep), vec!["a", "b"]);
    assert!(rep.entries.iter().all(|e| e.rank == 1));
}

#[test]
fn schema_mismatch_is_rejected() {
    let (x, y) = signal_and_noise(9, 50);
    let m = learners::fit(&RegressorSpec::new(Algorithm::Lr, 0), &x, &y).unwrap();
    assert!(permutation_importance(&m, &x, &y, &names(3), 2, 0).is_err());
    assert!(permutation_importance(&m, &x, &y, &names(2), 0, 0).is_err());
}
