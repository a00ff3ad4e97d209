//! CSV input tables, CSV/JSON reports.
//!
//! Input schemas (UTF-8, header row required, `.` decimal separator):
//!
//! * stations: `station_id,lat_deg,lon_deg,elevation_m`
//! * observations: `station_id,year,month,precip_mm`
//! * product: a first record `product_name,<name>`, then the header
//!   `grid_id,lat_deg,lon_deg,year,month,precip_mm`
//!
//! Precipitation is non-negative or the sentinel `-9999` (missing).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::{FeatureTable, GeoPoint, GridPoint, GridProduct, Observation, Station, YearMonth, MISSING_SENTINEL};
use crate::importance::ImportanceReport;
use crate::pipeline::{ExperimentReport, ImportanceStudy, SyntheticData, REPORT_FORMAT_VERSION};

pub const STATIONS_HEADER: [&str; 4] = ["station_id", "lat_deg", "lon_deg", "elevation_m"];
pub const OBSERVATIONS_HEADER: [&str; 4] = ["station_id", "year", "month", "precip_mm"];
pub const PRODUCT_HEADER: [&str; 6] = ["grid_id", "lat_deg", "lon_deg", "year", "month", "precip_mm"];
pub const RESULTS_HEADER: [&str; 10] = [
    "learner",
    "kind",
    "predictor_set",
    "mse",
    "mdse",
    "rs_type1",
    "rs_type2",
    "rank_type1",
    "rank_type2",
    "seconds",
];
pub const LONG_HEADER: [&str; 4] = ["learner", "predictor_set", "metric", "value"];
pub const IMPORTANCE_HEADER: [&str; 3] = ["feature", "score", "rank"];

/// Metrics emitted as long-format heatmap tables, one file each.
pub const HEATMAP_METRICS: [&str; 4] = ["rs_type1", "rs_type2", "rank_type1", "rank_type2"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TablePaths {
    pub stations: PathBuf,
    pub observations: PathBuf,
    /// Product A first, product B (optional) second.
    pub products: Vec<PathBuf>,
}

impl TablePaths {
    /// Default file names inside one directory; product B is included when
    /// present.
    pub fn in_dir(dir: &Path) -> Self {
        let b = dir.join("product_b.csv");
        let mut products = vec![dir.join("product_a.csv")];
        if b.exists() {
            products.push(b);
        }
        Self {
            stations: dir.join("stations.csv"),
            observations: dir.join("observations.csv"),
            products,
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.stations.as_path(), self.observations.as_path()];
        v.extend(self.products.iter().map(PathBuf::as_path));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub stations: Vec<Station>,
    pub observations: Vec<Observation>,
    pub products: Vec<GridProduct>,
}

impl Tables {
    pub fn n_missing_observations(&self) -> usize {
        self.observations.iter().filter(|o| o.is_missing()).count()
    }
}

impl From<SyntheticData> for Tables {
    fn from(d: SyntheticData) -> Self {
        Self {
            stations: d.stations,
            observations: d.observations,
            products: d.products,
        }
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads records of a headed CSV, checking the header; yields
/// (line number, record).
fn read_records(path: &Path, rdr: impl Read, header: &[&str], line_offset: u64) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(rdr);
    let got = rdr
        .headers()
        .map_err(|e| parse_err(path, line_offset + 1, e.to_string()))?
        .clone();
    if got.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            line_offset + 1,
            format!("expected header {}, got {}", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line()) + line_offset;
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line()) + line_offset;
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", header.len(), rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec[i].trim();
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} from {raw:?}")))
}

fn float(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64> {
    let v: f64 = field(path, line, rec, i, name)?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{name} is not finite")));
    }
    Ok(v)
}

fn precip(path: &Path, line: u64, rec: &csv::StringRecord, i: usize) -> Result<f64> {
    let v = float(path, line, rec, i, "precip_mm")?;
    if v < 0.0 && v != MISSING_SENTINEL {
        return Err(parse_err(path, line, format!("precip_mm {v} is negative and not the missing sentinel")));
    }
    Ok(v)
}

fn period(path: &Path, line: u64, rec: &csv::StringRecord, year: usize) -> Result<YearMonth> {
    let y: i32 = field(path, line, rec, year, "year")?;
    let m: u8 = field(path, line, rec, year + 1, "month")?;
    YearMonth::new(y, m).map_err(|e| parse_err(path, line, e.to_string()))
}

fn location(path: &Path, line: u64, rec: &csv::StringRecord, lat: usize) -> Result<GeoPoint> {
    let la = float(path, line, rec, lat, "lat_deg")?;
    let lo = float(path, line, rec, lat + 1, "lon_deg")?;
    GeoPoint::new(la, lo).map_err(|e| parse_err(path, line, e.to_string()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn read_stations(path: &Path) -> Result<Vec<Station>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_records(path, open(path)?, &STATIONS_HEADER, 0)? {
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty station_id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, line, format!("duplicate station_id {id}")));
        }
        out.push(Station {
            id,
            location: location(path, line, &rec, 1)?,
            elevation_m: float(path, line, &rec, 3, "elevation_m")?,
        });
    }
    Ok(out)
}

/// Reads observations, rejecting unknown stations and duplicate months.
/// Sentinel values are kept; [`Observation::is_missing`] flags them.
pub fn read_observations(path: &Path, stations: &[Station]) -> Result<Vec<Observation>> {
    let known: HashSet<&str> = stations.iter().map(|s| s.id.as_str()).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_records(path, open(path)?, &OBSERVATIONS_HEADER, 0)? {
        let id = rec[0].trim();
        if !known.contains(id) {
            return Err(parse_err(path, line, format!("unknown station_id {id}")));
        }
        let ym = period(path, line, &rec, 1)?;
        if !seen.insert((id.to_string(), ym)) {
            return Err(parse_err(path, line, format!("duplicate observation for {id} {ym}")));
        }
        out.push(Observation {
            station_id: id.to_string(),
            period: ym,
            precip_mm: precip(path, line, &rec, 3)?,
        });
    }
    Ok(out)
}

pub fn read_product(path: &Path) -> Result<GridProduct> {
    let mut rdr = open(path)?;
    let mut first = String::new();
    rdr.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let first = first.trim_end_matches(['\r', '\n']);
    let name = match first.split_once(',') {
        Some(("product_name", n)) if !n.trim().is_empty() => n.trim().to_string(),
        _ => return Err(parse_err(path, 1, "first record must be product_name,<name>")),
    };

    let mut points: Vec<GridPoint> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<(usize, YearMonth, Option<f64>)> = Vec::new();
    let mut seen = HashSet::new();
    for (line, rec) in read_records(path, rdr, &PRODUCT_HEADER, 1)? {
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty grid_id"));
        }
        let loc = location(path, line, &rec, 1)?;
        let k = match index.get(id) {
            Some(&k) => {
                if points[k].location != loc {
                    return Err(parse_err(path, line, format!("grid_id {id} appears with different coordinates")));
                }
                k
            }
            None => {
                index.insert(id.to_string(), points.len());
                points.push(GridPoint {
                    id: id.to_string(),
                    location: loc,
                });
                points.len() - 1
            }
        };
        let ym = period(path, line, &rec, 3)?;
        if !seen.insert((k, ym)) {
            return Err(parse_err(path, line, format!("duplicate value for grid_id {id} {ym}")));
        }
        let v = precip(path, line, &rec, 5)?;
        cells.push((k, ym, (v != MISSING_SENTINEL).then_some(v)));
    }
    if points.is_empty() {
        return Err(parse_err(path, 2, "product has no grid values"));
    }
    let mut values: BTreeMap<YearMonth, Vec<Option<f64>>> = BTreeMap::new();
    for (k, ym, v) in cells {
        values.entry(ym).or_insert_with(|| vec![None; points.len()])[k] = v;
    }
    Ok(GridProduct { name, points, values })
}

/// Loads stations, observations and one or two products.
pub fn load_tables(paths: &TablePaths) -> Result<Tables> {
    if paths.products.is_empty() || paths.products.len() > 2 {
        return Err(Error::invalid("expected one or two product files"));
    }
    let stations = read_stations(&paths.stations)?;
    let observations = read_observations(&paths.observations, &stations)?;
    let products = paths.products.iter().map(|p| read_product(p)).collect::<Result<Vec<_>>>()?;
    if products.len() == 2 && products[0].name == products[1].name {
        return Err(Error::invalid(format!("both products are named {}", products[0].name)));
    }
    Ok(Tables {
        stations,
        observations,
        products,
    })
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_stations(path: &Path, stations: &[Station]) -> Result<()> {
    write_rows(
        path,
        &STATIONS_HEADER,
        stations.iter().map(|s| {
            [
                s.id.clone(),
                s.location.lat.to_string(),
                s.location.lon.to_string(),
                s.elevation_m.to_string(),
            ]
        }),
    )
}

pub fn write_observations(path: &Path, observations: &[Observation]) -> Result<()> {
    write_rows(
        path,
        &OBSERVATIONS_HEADER,
        observations.iter().map(|o| {
            [
                o.station_id.clone(),
                o.period.year.to_string(),
                o.period.month.to_string(),
                o.precip_mm.to_string(),
            ]
        }),
    )
}

/// Writes one row per grid point and month; missing cells use the sentinel.
pub fn write_product(path: &Path, product: &GridProduct) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "product_name,{}", product.name).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f);
    w.write_record(PRODUCT_HEADER).map_err(|e| csv_err(path, e))?;
    for (ym, vals) in &product.values {
        for (p, v) in product.points.iter().zip(vals) {
            w.write_record([
                p.id.clone(),
                p.location.lat.to_string(),
                p.location.lon.to_string(),
                ym.year.to_string(),
                ym.month.to_string(),
                v.unwrap_or(MISSING_SENTINEL).to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes tables under the names [`TablePaths::in_dir`] expects.
pub fn write_tables(dir: &Path, tables: &Tables) -> Result<TablePaths> {
    let names = ["product_a.csv", "product_b.csv"];
    if tables.products.len() > names.len() {
        return Err(Error::invalid("at most two products can be written"));
    }
    let paths = TablePaths {
        stations: dir.join("stations.csv"),
        observations: dir.join("observations.csv"),
        products: names[..tables.products.len()].iter().map(|n| dir.join(n)).collect(),
    };
    write_stations(&paths.stations, &tables.stations)?;
    write_observations(&paths.observations, &tables.observations)?;
    for (p, prod) in paths.products.iter().zip(&tables.products) {
        write_product(p, prod)?;
    }
    Ok(paths)
}

/// Columns: `station_id,year,month,<features>,target`.
pub fn write_feature_table(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut header = vec!["station_id", "year", "month"];
    header.extend(table.feature_names.iter().map(String::as_str));
    header.push("target");
    write_rows(
        path,
        &header,
        table.rows.iter().map(|r| {
            let mut rec = vec![r.station_id.clone(), r.period.year.to_string(), r.period.month.to_string()];
            rec.extend(r.features.iter().map(f64::to_string));
            rec.push(r.target.to_string());
            rec
        }),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_experiment_report(path: &Path) -> Result<ExperimentReport> {
    let r: ExperimentReport = read_json(path)?;
    if r.format_version != REPORT_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported report format_version {} (expected {REPORT_FORMAT_VERSION})",
            r.format_version
        )));
    }
    Ok(r)
}

/// Percentages with two decimals.
pub fn format_percent(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn opt_percent(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), format_percent)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes `report.json` and/or `results.csv` plus one long-format
/// `heatmap_<metric>.csv` per metric. Returns the paths written.
pub fn write_experiment_report(dir: &Path, report: &ExperimentReport, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let p = dir.join("report.json");
        write_json(&p, report)?;
        written.push(p);
    }
    if formats.contains(&ReportFormat::Csv) {
        let p = dir.join("results.csv");
        write_rows(
            &p,
            &RESULTS_HEADER,
            report.results.iter().map(|r| {
                [
                    r.learner.clone(),
                    match r.kind {
                        crate::pipeline::LearnerKind::Base => "base".into(),
                        crate::pipeline::LearnerKind::Combiner => "combiner".into(),
                    },
                    r.predictor_set.to_string(),
                    r.mse.to_string(),
                    r.mdse.to_string(),
                    opt_percent(r.rs_type1),
                    opt_percent(r.rs_type2),
                    r.rank_type1.to_string(),
                    r.rank_type2.to_string(),
                    format!("{:.6}", r.seconds),
                ]
            }),
        )?;
        written.push(p);
        for metric in HEATMAP_METRICS {
            let p = dir.join(format!("heatmap_{metric}.csv"));
            write_rows(
                &p,
                &LONG_HEADER,
                report.results.iter().map(|r| {
                    let value = match metric {
                        "rs_type1" => opt_percent(r.rs_type1),
                        "rs_type2" => opt_percent(r.rs_type2),
                        "rank_type1" => r.rank_type1.to_string(),
                        _ => r.rank_type2.to_string(),
                    };
                    [r.learner.clone(), r.predictor_set.to_string(), metric.to_string(), value]
                }),
            )?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Lollipop table: `feature,score,rank`, in descending score order.
pub fn write_importance_csv(path: &Path, report: &ImportanceReport) -> Result<()> {
    let order = crate::importance::rank_contributors(report);
    write_rows(
        path,
        &IMPORTANCE_HEADER,
        order.iter().map(|f| {
            let e = report.entries.iter().find(|e| &e.feature == f).expect("feature from report");
            [e.feature.clone(), e.score.to_string(), e.rank.to_string()]
        }),
    )
}

/// Writes `importance.json` and/or one lollipop CSV per report, named
/// `importance_<subject>_<set>_<method>.csv`.
pub fn write_importance_study(dir: &Path, study: &ImportanceStudy, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let p = dir.join("importance.json");
        write_json(&p, study)?;
        written.push(p);
    }
    if formats.contains(&ReportFormat::Csv) {
        for c in study.base_learners.iter().chain(&study.predictors) {
            for r in [&c.permutation, &c.gain] {
                let p = dir.join(format!("importance_{}_{}_{}.csv", c.subject, c.predictor_set, r.method));
                write_importance_csv(&p, r)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn fixture(dir: &Path) -> TablePaths {
        let stations = write(
            dir,
            "stations.csv",
            "station_id,lat_deg,lon_deg,elevation_m\nA,40.0,-100.0,500\nB,41.0,-101.0,650.5\nC,39.5,-99.0,300\n",
        );
        let observations = write(
            dir,
            "observations.csv",
            "station_id,year,month,precip_mm\nA,2001,1,10.5\nA,2001,2,-9999\nB,2001,1,3\nB,2001,2,0\nC,2001,1,7.25\nC,2001,2,8\n",
        );
        let product = write(
            dir,
            "product_a.csv",
            "product_name,satA\ngrid_id,lat_deg,lon_deg,year,month,precip_mm\ng1,40,-100,2001,1,9\ng2,41,-101,2001,1,-9999\ng1,40,-100,2001,2,4\n",
        );
        TablePaths {
            stations,
            observations,
            products: vec![product],
        }
    }

    #[test]
    fn loads_fixture_and_flags_sentinel() {
        let dir = tempfile::tempdir().unwrap();
        let t = load_tables(&fixture(dir.path())).unwrap();
        assert_eq!(t.stations.len(), 3);
        assert_eq!(t.observations.len(), 6);
        assert_eq!(t.n_missing_observations(), 1);
        let p = &t.products[0];
        assert_eq!(p.name, "satA");
        assert_eq!(p.points.len(), 2);
        let jan = YearMonth::new(2001, 1).unwrap();
        let feb = YearMonth::new(2001, 2).unwrap();
        assert_eq!(p.values[&jan], vec![Some(9.0), None]);
        assert_eq!(p.values[&feb], vec![Some(4.0), None]);
    }

    #[test]
    fn rejects_duplicates_and_unknowns_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path());
        write(
            dir.path(),
            "product_a.csv",
            "product_name,satA\ngrid_id,lat_deg,lon_deg,year,month,precip_mm\ng1,40,-100,2001,1,9\ng1,40,-100,2001,1,5\n",
        );
        let e = load_tables(&paths).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }), "{e}");

        let p = write(dir.path(), "obs2.csv", "station_id,year,month,precip_mm\nA,2001,1,1\nZ,2001,1,2\n");
        let stations = read_stations(&paths.stations).unwrap();
        let e = read_observations(&p, &stations).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(e.to_string().contains("unknown station_id Z"));

        let p = write(dir.path(), "obs3.csv", "station_id,year,month,precip_mm\nA,2001,1,1\nA,2001,1,2\n");
        assert!(read_observations(&p, &stations).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s.csv", "station_id,lat_deg,lon_deg,elevation_m\nA,40.0,-100.0,500\n");
        let stations = read_stations(&s).unwrap();
        for (body, line) in [
            ("A,2001,13,1\n", 2),
            ("A,2001,1,-3\n", 2),
            ("A,2001,1,1,000\n", 2),
            ("A,2001,1,1\nA,2001,2,1e\n", 3),
        ] {
            let p = write(dir.path(), "o.csv", &format!("station_id,year,month,precip_mm\n{body}"));
            match read_observations(&p, &stations) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{body}"),
                other => panic!("{body}: {other:?}"),
            }
        }
        let p = write(dir.path(), "bad_header.csv", "id,lat,lon,elev\nA,1,2,3\n");
        assert!(read_stations(&p).is_err());
    }

    #[test]
    fn write_then_load_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let first = load_tables(&fixture(dir.path())).unwrap();
        let out = dir.path().join("out");
        let paths = write_tables(&out, &first).unwrap();
        let second = load_tables(&paths).unwrap();
        let bytes1: Vec<Vec<u8>> = paths.all().iter().map(|p| fs::read(p).unwrap()).collect();
        let paths2 = write_tables(&dir.path().join("out2"), &second).unwrap();
        let bytes2: Vec<Vec<u8>> = paths2.all().iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(bytes1, bytes2);
        assert_eq!(first.stations, second.stations);
        assert_eq!(first.observations, second.observations);
        // Absent cells come back as missing.
        assert_eq!(first.products, second.products);
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(27.3249), "27.32");
        assert_eq!(format_percent(-0.001), "0.00");
        assert_eq!(format_percent(-50.0), "-50.00");
        assert_eq!(opt_percent(None), "NA");
    }
}
