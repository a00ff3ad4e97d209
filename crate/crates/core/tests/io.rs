mod common;

use std::fs;

use common::{small_spec, synthetic_tables};
use satblend::io::*;
use satblend::pipeline::{generate_synthetic, run_experiment, run_importance, ExperimentConfig};

#[test]
fn synthetic_tables_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&small_spec(1)).unwrap();
    let tables = Tables::from(data);
    let paths = write_tables(dir.path(), &tables).unwrap();
    assert_eq!(paths, TablePaths::in_dir(dir.path()));
    let back = load_tables(&paths).unwrap();
    assert_eq!(back, tables);
}

#[test]
fn experiment_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let tables = synthetic_tables(&small_spec(2));
    let report = run_experiment(&tables, &ExperimentConfig { seed: 2, ..Default::default() }).unwrap();
    let written = write_experiment_report(dir.path(), &report, &[ReportFormat::Json, ReportFormat::Csv]).unwrap();
    assert_eq!(written.len(), 2 + HEATMAP_METRICS.len());

    let back = read_experiment_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, report);

    let mut rdr = csv::Reader::from_path(dir.path().join("results.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), RESULTS_HEADER);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 51);
    for (rec, r) in rows.iter().zip(&report.results) {
        let mse: f64 = rec[3].parse().unwrap();
        assert!((mse - r.mse).abs() <= 1e-9 * r.mse.max(1.0));
        let rs = &rec[5];
        let (_, decimals) = rs.split_once('.').unwrap();
        assert_eq!(decimals.len(), 2, "{rs}");
    }

    for metric in HEATMAP_METRICS {
        let mut rdr = csv::Reader::from_path(dir.path().join(format!("heatmap_{metric}.csv"))).unwrap();
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), LONG_HEADER);
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 51);
        assert!(rows.iter().all(|r| &r[2] == metric));
    }
    let mars = fs::read_to_string(dir.path().join("heatmap_rs_type1.csv")).unwrap();
    assert!(mars.lines().any(|l| l == "MARS,set1,rs_type1,0.00"));
}

#[test]
fn report_with_unknown_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let tables = synthetic_tables(&small_spec(3));
    let mut report = run_experiment(
        &tables,
        &ExperimentConfig {
            predictor_sets: vec![satblend::geo::PredictorSetId::Set1],
            ..Default::default()
        },
    )
    .unwrap();
    report.format_version = 99;
    let p = dir.path().join("r.json");
    write_json(&p, &report).unwrap();
    assert!(read_experiment_report(&p).is_err());
}

#[test]
fn importance_lollipop_tables() {
    let dir = tempfile::tempdir().unwrap();
    let tables = synthetic_tables(&small_spec(4));
    let study = run_importance(&tables, &ExperimentConfig { seed: 4, ..Default::default() }, 2).unwrap();
    let written = write_importance_study(dir.path(), &study, &[ReportFormat::Json, ReportFormat::Csv]).unwrap();
    // JSON plus two tables for each of three base-learner reports and the predictor report.
    assert_eq!(written.len(), 1 + 2 * 4);
    let p = dir.path().join("importance_predictors_set3_permutation.csv");
    let mut rdr = csv::Reader::from_path(&p).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), IMPORTANCE_HEADER);
    let scores: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(scores.len(), 17);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn feature_table_csv_has_frozen_columns() {
    let dir = tempfile::tempdir().unwrap();
    let tables = synthetic_tables(&small_spec(5));
    let t = &tables[&satblend::geo::PredictorSetId::Set3];
    let p = dir.path().join("f.csv");
    write_feature_table(&p, t).unwrap();
    let mut rdr = csv::Reader::from_path(&p).unwrap();
    let h: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(h.len(), 3 + 17 + 1);
    assert_eq!(h[3], "productA_value_1");
    assert_eq!(h[19], "elevation");
    assert_eq!(rdr.records().count(), t.len());
}

#[test]
fn unwritable_path_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let tables = Tables::from(generate_synthetic(&small_spec(6)).unwrap());
    assert!(write_tables(&blocker.join("sub"), &tables).is_err());
}
