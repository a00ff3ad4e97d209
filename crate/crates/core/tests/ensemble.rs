mod common;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use common::{naive_mdse, naive_median, naive_mse, random_vec, rng};
use satblend::ensemble::*;
use satblend::learners::{Algorithm, RegressorSpec};

fn random_preds(seed: u64, n: usize) -> PredictionMatrix {
    let mut r = rng(seed);
    PredictionMatrix::new((0..6).map(|_| random_vec(&mut r, n, -10.0, 50.0)).collect()).unwrap()
}

#[test]
fn mean_and_median_match_order_statistics() {
    for seed in 0..50 {
        let p = random_preds(seed, 40);
        let mean = combine_mean(&p).unwrap();
        let med = combine_median(&p).unwrap();
        for i in 0..40 {
            let row = p.row(i);
            let s: f64 = row.iter().sum::<f64>() / 6.0;
            assert!((mean[i] - s).abs() <= 1e-12 * s.abs().max(1.0));
            assert_eq!(med[i], naive_median(&row));
        }
    }
}

#[test]
fn best_selection_is_argmin_of_column_metric() {
    for seed in 0..50 {
        let p = random_preds(seed, 30);
        let mut r = rng(seed + 1000);
        let truth = random_vec(&mut r, 30, 0.0, 40.0);
        for (crit, metric) in [
            (SelectionCriterion::Mse, naive_mse as fn(&[f64], &[f64]) -> f64),
            (SelectionCriterion::Mdse, naive_mdse),
        ] {
            let scores: Vec<f64> = (0..6).map(|j| metric(p.column(j), &truth)).collect();
            let want = (0..6).fold(0, |b, j| if scores[j] < scores[b] { j } else { b });
            assert_eq!(select_best(&p, &truth, crit).unwrap(), want);
        }
    }
}

#[test]
fn best_combiner_passes_selected_column_through() {
    let p = random_preds(3, 25);
    let truth: Vec<f64> = p.column(4).iter().map(|v| v + 0.01).collect();
    let c = fit_combiner(CombinerSpec::Best(SelectionCriterion::Mse), None, &p, &truth).unwrap();
    assert_eq!(c.state, CombinerState::Selected(4));
    let q = random_preds(4, 10);
    assert_eq!(predict_combiner(&c, &q).unwrap(), q.column(4));
}

#[test]
fn linear_stacker_recovers_blend_weights() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let p = PredictionMatrix::new((0..6).map(|_| random_vec(&mut r, 1000, 0.0, 100.0)).collect()).unwrap();
        let noise = Normal::new(0.0, 0.01).unwrap();
        let truth: Vec<f64> = (0..1000)
            .map(|i| 0.7 * p.column(0)[i] + 0.3 * p.column(1)[i] + noise.sample(&mut r))
            .collect();
        let c = fit_stacker(&RegressorSpec::new(Algorithm::Lr, 0), &p, &truth).unwrap();
        let CombinerState::Meta(m) = &c.state else { panic!() };
        let satblend::learners::Model::Linear(lin) = &m.model else { panic!() };
        assert!((lin.weights[0] - 0.7).abs() < 0.05);
        assert!((lin.weights[1] - 0.3).abs() < 0.05);
        for w in &lin.weights[2..] {
            assert!(w.abs() < 0.05);
        }
    }
}

#[test]
fn every_combiner_trains_and_predicts() {
    let mut r = rng(9);
    let p = random_preds(9, 120);
    let truth: Vec<f64> = (0..120).map(|i| p.row(i).iter().sum::<f64>() / 6.0 + r.random_range(-1.0..1.0)).collect();
    for spec in CombinerSpec::all() {
        let meta = match spec {
            CombinerSpec::Stack(a) => Some(RegressorSpec::new(a, 1)),
            _ => None,
        };
        let c = fit_combiner(spec, meta.as_ref(), &p, &truth).unwrap();
        let out = predict_combiner(&c, &p).unwrap();
        assert_eq!(out.len(), 120, "{spec}");
        assert!(out.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn reordered_columns_are_rejected() {
    let p = random_preds(5, 20);
    let truth = p.column(0).to_vec();
    let c = fit_combiner(CombinerSpec::Stack(Algorithm::Lr), None, &p, &truth).unwrap();
    let mut order = Algorithm::BASE.to_vec();
    order.swap(0, 1);
    let swapped = PredictionMatrix::with_order(order, p.columns().to_vec()).unwrap();
    assert!(predict_combiner(&c, &swapped).is_err());
}

#[test]
fn combiner_names_round_trip() {
    for c in CombinerSpec::all() {
        assert_eq!(c.name().parse::<CombinerSpec>().unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, format!("\"{}\"", c.name()));
        assert_eq!(serde_json::from_str::<CombinerSpec>(&json).unwrap(), c);
    }
    assert_eq!(CombinerSpec::all().len(), 11);
}

proptest! {
    #[test]
    fn mean_lies_within_row_range(rows in prop::collection::vec(prop::array::uniform6(-1e6f64..1e6), 1..30)) {
        let cols: Vec<Vec<f64>> = (0..6).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        let p = PredictionMatrix::new(cols).unwrap();
        let mean = combine_mean(&p).unwrap();
        let med = combine_median(&p).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(mean[i] >= lo && mean[i] <= hi);
            prop_assert!(med[i] >= lo && med[i] <= hi);
        }
    }

    #[test]
    fn identical_columns_combine_to_themselves(v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let p = PredictionMatrix::new(vec![v.clone(); 6]).unwrap();
        prop_assert_eq!(combine_mean(&p).unwrap(), v.clone());
        prop_assert_eq!(combine_median(&p).unwrap(), v);
    }
}
