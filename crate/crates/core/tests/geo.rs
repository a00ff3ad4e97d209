mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;

use common::{brute_nearest_four, naive_haversine, rel_close, rng};
use satblend::geo::*;

fn gp(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

#[test]
fn haversine_frozen_values() {
    // Reference values from an independent double-precision evaluation.
    let cases = [
        ((0.0, 0.0), (0.0, 1.0), 111_194.926_644_558_74),
        ((40.0, -100.0), (41.0, -101.0), 139_688.634_546_867_16),
        ((51.5, -0.12), (40.71, -74.0), 5_570_794.265_822_576),
        ((-33.9, 151.2), (35.7, 139.7), 7_830_902.563_722_031),
    ];
    for ((a, b), (c, d), want) in cases {
        let got = haversine_m(gp(a, b), gp(c, d));
        assert!(rel_close(got, want, 1e-12), "{got} vs {want}");
    }
}

#[test]
fn haversine_agrees_with_atan2_form() {
    let mut r = rng(11);
    for _ in 0..2000 {
        let a = gp(r.random_range(-89.0..89.0), r.random_range(-180.0..180.0));
        let b = gp(r.random_range(-89.0..89.0), r.random_range(-180.0..180.0));
        let (x, y) = (haversine_m(a, b), naive_haversine(a, b));
        assert!((x - y).abs() <= 1e-9 * x.max(1.0), "{x} vs {y}");
    }
}

#[test]
fn kd_tree_matches_brute_force_on_random_grids() {
    let mut r = rng(5);
    for trial in 0..200 {
        let n = r.random_range(4..300);
        let grid: Vec<GeoPoint> = (0..n)
            .map(|_| gp(r.random_range(-80.0..80.0), r.random_range(-180.0..180.0)))
            .collect();
        let idx = SpatialIndex::build(&grid).unwrap();
        for _ in 0..5 {
            let q = gp(r.random_range(-80.0..80.0), r.random_range(-180.0..180.0));
            let got = nearest_four(&idx, q).unwrap();
            let want = brute_nearest_four(&grid, q);
            for (g, (i, d)) in got.neighbors.iter().zip(&want) {
                assert_eq!(g.grid_index, *i, "trial {trial}");
                assert_eq!(g.distance_m, *d);
            }
        }
    }
}

#[test]
fn regular_lattice_ties_go_to_lower_index() {
    // Station at a cell center is equidistant from the four corners.
    let mut grid = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            grid.push(gp(-2.5 + i as f64, 10.0 + j as f64));
        }
    }
    let idx = SpatialIndex::build(&grid).unwrap();
    let q = gp(0.0, 12.5);
    let got: Vec<usize> = nearest_four(&idx, q).unwrap().neighbors.iter().map(|n| n.grid_index).collect();
    let want: Vec<usize> = brute_nearest_four(&grid, q).iter().map(|p| p.0).collect();
    assert_eq!(got, want);
    let mut sorted = got.clone();
    sorted.sort();
    assert_eq!(got, sorted);
}

#[test]
fn duplicated_grid_points_tie_by_index() {
    let grid = vec![gp(1.0, 1.0), gp(0.0, 0.0), gp(1.0, 1.0), gp(5.0, 5.0), gp(1.0, 1.0)];
    let idx = SpatialIndex::build(&grid).unwrap();
    let got: Vec<usize> = nearest_four(&idx, gp(1.2, 1.1)).unwrap().neighbors.iter().map(|n| n.grid_index).collect();
    assert_eq!(got, vec![0, 2, 4, 1]);
}

fn product(name: &str, grid: &[GeoPoint], months: &[YearMonth], f: impl Fn(usize, usize) -> Option<f64>) -> GridProduct {
    let points: Vec<GridPoint> = grid
        .iter()
        .enumerate()
        .map(|(i, g)| GridPoint {
            id: format!("g{i}"),
            location: *g,
        })
        .collect();
    let values: BTreeMap<YearMonth, Vec<Option<f64>>> = months
        .iter()
        .enumerate()
        .map(|(t, m)| (*m, (0..grid.len()).map(|i| f(t, i)).collect()))
        .collect();
    GridProduct {
        name: name.into(),
        points,
        values,
    }
}

#[test]
fn assembled_features_follow_frozen_layout() {
    let grid = vec![gp(0.0, 0.0), gp(0.0, 1.0), gp(1.0, 0.0), gp(1.0, 1.0), gp(3.0, 3.0)];
    let months = [YearMonth::new(2020, 1).unwrap(), YearMonth::new(2020, 2).unwrap()];
    let a = product("A", &grid, &months, |t, i| Some(10.0 * i as f64 + t as f64));
    let b = product("B", &grid, &months, |t, i| Some(100.0 + i as f64 + t as f64));
    let st = Station {
        id: "S".into(),
        location: gp(0.2, 0.1),
        elevation_m: 321.0,
    };
    let obs: Vec<Observation> = months
        .iter()
        .map(|m| Observation {
            station_id: "S".into(),
            period: *m,
            precip_mm: 7.0,
        })
        .collect();
    let t = assemble_features(std::slice::from_ref(&st), &obs, &[a, b], PredictorSetId::Set3).unwrap();
    assert_eq!(t.feature_names.len(), 17);
    assert_eq!(t.feature_names[0], "A_value_1");
    assert_eq!(t.feature_names[4], "B_value_1");
    assert_eq!(t.feature_names[8], "A_distance_1");
    assert_eq!(t.feature_names[12], "B_distance_1");
    assert_eq!(t.feature_names[16], "elevation");
    let order: Vec<usize> = brute_nearest_four(&grid, st.location).iter().map(|p| p.0).collect();
    let row = &t.rows[1];
    for (k, i) in order.iter().enumerate() {
        assert_eq!(row.features[k], 10.0 * *i as f64 + 1.0);
        assert_eq!(row.features[4 + k], 100.0 + *i as f64 + 1.0);
        assert_eq!(row.features[8 + k], haversine_m(st.location, grid[*i]));
        assert_eq!(row.features[12 + k], row.features[8 + k]);
    }
    assert_eq!(row.features[16], 321.0);
    assert_eq!(row.target, 7.0);
}

#[test]
fn drops_are_counted_by_cause() {
    let grid = vec![gp(0.0, 0.0), gp(0.0, 1.0), gp(1.0, 0.0), gp(1.0, 1.0)];
    let months: Vec<YearMonth> = (1..=4).map(|m| YearMonth::new(2020, m).unwrap()).collect();
    // Month index 2 lacks one product value.
    let a = product("A", &grid, &months[..3], |t, i| if t == 2 && i == 3 { None } else { Some(1.0) });
    let st = Station {
        id: "S".into(),
        location: gp(0.5, 0.5),
        elevation_m: 0.0,
    };
    let obs: Vec<Observation> = months
        .iter()
        .enumerate()
        .map(|(t, m)| Observation {
            station_id: "S".into(),
            period: *m,
            precip_mm: if t == 0 { MISSING_SENTINEL } else { 2.0 },
        })
        .collect();
    let t = assemble_features(&[st], &obs, &[a], PredictorSetId::Set1).unwrap();
    // Month 1 missing gauge; month 3 missing a neighbor value; month 4 absent from the product.
    assert_eq!(t.len(), 1);
    assert_eq!(t.drops.missing_observation, 1);
    assert_eq!(t.drops.missing_product_value, 2);
}

proptest! {
    #[test]
    fn neighbor_distances_non_decreasing(
        pts in prop::collection::vec((-70.0f64..70.0, -170.0f64..170.0), 4..60),
        q in (-70.0f64..70.0, -170.0f64..170.0),
    ) {
        let grid: Vec<GeoPoint> = pts.iter().map(|(a, b)| gp(*a, *b)).collect();
        let idx = SpatialIndex::build(&grid).unwrap();
        let n = nearest_four(&idx, gp(q.0, q.1)).unwrap();
        for w in n.neighbors.windows(2) {
            prop_assert!(w[0].distance_m <= w[1].distance_m);
        }
        let want = brute_nearest_four(&grid, gp(q.0, q.1));
        prop_assert_eq!(n.neighbors.iter().map(|x| x.grid_index).collect::<Vec<_>>(), want.iter().map(|x| x.0).collect::<Vec<_>>());
    }

    #[test]
    fn haversine_symmetric_and_bounded(
        a in (-90.0f64..=90.0, -180.0f64..=180.0),
        b in (-90.0f64..=90.0, -180.0f64..=180.0),
    ) {
        let (p, q) = (gp(a.0, a.1), gp(b.0, b.1));
        let d = haversine_m(p, q);
        prop_assert_eq!(d, haversine_m(q, p));
        prop_assert!(d >= 0.0);
        prop_assert!(d <= std::f64::consts::PI * EARTH_RADIUS_M + 1e-6);
    }
}
