//! Independent reference implementations used by the integration and
//! acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use satblend::geo::{haversine_m, FeatureTable, GeoPoint, PredictorSetId};
use satblend::pipeline::{assemble_sets, generate_synthetic, SyntheticSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Great-circle distance via the atan2 form, in metres.
pub fn naive_haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let r = 6_371_000.0_f64;
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Exhaustive top-4 by distance, ties to the lower index.
pub fn brute_nearest_four(grid: &[GeoPoint], q: GeoPoint) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = grid.iter().enumerate().map(|(i, g)| (i, haversine_m(q, *g))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(4);
    all
}

pub fn naive_mse(p: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - t[i]) * (p[i] - t[i]);
    }
    s / p.len() as f64
}

pub fn naive_median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    // Insertion sort keeps the oracle free of library sorting.
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn naive_mdse(p: &[f64], t: &[f64]) -> f64 {
    let sq: Vec<f64> = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).collect();
    naive_median(&sq)
}

pub fn naive_skill(m: f64, b: f64) -> f64 {
    100.0 * (1.0 - m / b)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Feature tables for every set from a synthetic spec.
pub fn synthetic_tables(spec: &SyntheticSpec) -> BTreeMap<PredictorSetId, FeatureTable> {
    let d = generate_synthetic(spec).expect("synthetic data");
    assemble_sets(&d.stations, &d.observations, &d.products, &PredictorSetId::ALL).expect("feature tables")
}

/// A small synthetic data set for quick end-to-end runs.
pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_stations: 20,
        n_months: 12,
        seed,
        ..SyntheticSpec::default()
    }
}
