//! Spatial indexing of grid points and assembly of predictor-set feature rows.
//!
//! Every gauge station is paired with the four closest grid points of each
//! gridded product. Distances are great-circle (haversine) distances in
//! meters on a sphere of radius [`EARTH_RADIUS_M`]. Equidistant grid points
//! are ordered by ascending grid-point index.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Number of grid neighbors used per station.
pub const NEIGHBOR_COUNT: usize = 4;

/// Precipitation value that marks a missing record in input tables.
pub const MISSING_SENTINEL: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(Error::invalid(format!("latitude {} out of [-90, 90]", self.lat)));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(Error::invalid(format!(
                "longitude {} out of [-180, 180]",
                self.lon
            )));
        }
        Ok(())
    }

    fn unit_vector(&self) -> [f64; 3] {
        let (phi, lambda) = (self.lat.to_radians(), self.lon.to_radians());
        [
            phi.cos() * lambda.cos(),
            phi.cos() * lambda.sin(),
            phi.sin(),
        ]
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub grid_index: usize,
    pub distance_m: f64,
}

/// The four closest grid points to a station, nearest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub neighbors: [Neighbor; NEIGHBOR_COUNT],
}

#[derive(Debug, Clone)]
enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

const LEAF_SIZE: usize = 8;

/// Immutable k-d tree over grid points embedded on the unit sphere.
///
/// Euclidean chord length is monotone in great-circle distance, so pruning on
/// chords is exact; final ordering is always done on haversine distances.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<GeoPoint>,
    xyz: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl SpatialIndex {
    pub fn build(points: &[GeoPoint]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("grid point list"));
        }
        for p in points {
            p.validate()?;
        }
        let xyz: Vec<[f64; 3]> = points.iter().map(GeoPoint::unit_vector).collect();
        let mut index = Self {
            points: points.to_vec(),
            xyz,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.xyz[i][a]);
                hi[a] = hi[a].max(self.xyz[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let xyz = &self.xyz;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            xyz[a][axis].total_cmp(&xyz[b][axis]).then(a.cmp(&b))
        });
        let value = self.xyz[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> GeoPoint {
        self.points[i]
    }

    /// The `k` nearest grid points, ascending by distance, ties by index.
    pub fn nearest_k(&self, query: GeoPoint, k: usize) -> Result<Vec<Neighbor>> {
        query.validate()?;
        if self.points.len() < k {
            return Err(Error::invalid(format!(
                "index holds {} points, {} neighbors requested",
                self.points.len(),
                k
            )));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = query.unit_vector();
        let mut cands: Vec<(f64, usize)> = Vec::new();
        let mut bound = f64::INFINITY;
        self.search(0, &q, k, &mut cands, &mut bound);

        let mut out: Vec<Neighbor> = cands
            .into_iter()
            .map(|(_, i)| Neighbor {
                grid_index: i,
                distance_m: haversine_m(query, self.points[i]),
            })
            .collect();
        out.sort_by(|a, b| {
            a.distance_m
                .total_cmp(&b.distance_m)
                .then(a.grid_index.cmp(&b.grid_index))
        });
        out.truncate(k);
        Ok(out)
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, cands: &mut Vec<(f64, usize)>, bound: &mut f64) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let p = self.xyz[i];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if d2 <= *bound {
                        cands.push((d2, i));
                        if cands.len() >= k {
                            *bound = kth_bound(cands, k);
                            cands.retain(|c| c.0 <= *bound);
                        }
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, cands, bound);
                if diff * diff <= *bound {
                    self.search(far, q, k, cands, bound);
                }
            }
        }
    }
}

/// Squared-chord bound admitting every point that may tie with the k-th
/// nearest once distances are recomputed with haversine.
fn kth_bound(cands: &mut [(f64, usize)], k: usize) -> f64 {
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let kth = cands[k - 1].0;
    kth * (1.0 + 1e-9) + 1e-18
}

/// Four closest grid points to `station`.
pub fn nearest_four(index: &SpatialIndex, station: GeoPoint) -> Result<NeighborSet> {
    let v = index.nearest_k(station, NEIGHBOR_COUNT)?;
    Ok(NeighborSet {
        neighbors: [v[0], v[1], v[2], v[3]],
    })
}

/// Calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::invalid(format!("month {month} out of 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub location: GeoPoint,
    pub elevation_m: f64,
}

/// Monthly gauge total. A value equal to [`MISSING_SENTINEL`] is kept but
/// flagged as missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub station_id: String,
    pub period: YearMonth,
    pub precip_mm: f64,
}

impl Observation {
    pub fn is_missing(&self) -> bool {
        self.precip_mm == MISSING_SENTINEL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub id: String,
    pub location: GeoPoint,
}

/// A gridded product: grid-point locations plus monthly values per point.
/// `None` marks an absent or sentinel value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridProduct {
    pub name: String,
    pub points: Vec<GridPoint>,
    pub values: BTreeMap<YearMonth, Vec<Option<f64>>>,
}

impl GridProduct {
    pub fn value(&self, grid_index: usize, period: YearMonth) -> Option<f64> {
        self.values
            .get(&period)
            .and_then(|v| v.get(grid_index).copied().flatten())
    }

    pub fn index(&self) -> Result<SpatialIndex> {
        let pts: Vec<GeoPoint> = self.points.iter().map(|p| p.location).collect();
        SpatialIndex::build(&pts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PredictorSetId {
    Set1,
    Set2,
    Set3,
}

impl PredictorSetId {
    pub const ALL: [PredictorSetId; 3] = [Self::Set1, Self::Set2, Self::Set3];

    pub fn n_features(self) -> usize {
        match self {
            Self::Set1 | Self::Set2 => 2 * NEIGHBOR_COUNT + 1,
            Self::Set3 => 4 * NEIGHBOR_COUNT + 1,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::Set1 => 1,
            Self::Set2 => 2,
            Self::Set3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::Set1),
            2 => Ok(Self::Set2),
            3 => Ok(Self::Set3),
            _ => Err(Error::invalid(format!("predictor set {n} is not one of 1, 2, 3"))),
        }
    }

    pub fn products_required(self) -> usize {
        match self {
            Self::Set1 => 1,
            Self::Set2 | Self::Set3 => 2,
        }
    }
}

impl fmt::Display for PredictorSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "set{}", self.number())
    }
}

/// Row key: station and month.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub station_id: String,
    pub period: YearMonth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub station_id: String,
    pub period: YearMonth,
    pub features: Vec<f64>,
    pub target: f64,
}

impl FeatureRow {
    pub fn key(&self) -> RowKey {
        RowKey {
            station_id: self.station_id.clone(),
            period: self.period,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub missing_observation: usize,
    pub missing_product_value: usize,
    pub outside_common_universe: usize,
}

impl DropReport {
    pub fn total(&self) -> usize {
        self.missing_observation + self.missing_product_value + self.outside_common_universe
    }
}

/// Regression rows of one predictor set, sorted by (station, month).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub set: PredictorSetId,
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
    pub drops: DropReport,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn matrix(&self) -> Matrix {
        let rows: Vec<&[f64]> = self.rows.iter().map(|r| r.features.as_slice()).collect();
        Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, self.feature_names.len()))
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }

    pub fn keys(&self) -> Vec<RowKey> {
        self.rows.iter().map(FeatureRow::key).collect()
    }

    /// Keeps only rows whose key is in `keep`; the rest are counted as
    /// outside the common row universe.
    pub fn restrict_to(&mut self, keep: &HashSet<RowKey>) {
        let before = self.rows.len();
        self.rows.retain(|r| keep.contains(&r.key()));
        self.drops.outside_common_universe += before - self.rows.len();
    }
}

/// Feature names in the frozen column order of a predictor set.
pub fn feature_names(set: PredictorSetId, product_a: &str, product_b: &str) -> Vec<String> {
    fn values(p: &str) -> impl Iterator<Item = String> + '_ {
        (1..=NEIGHBOR_COUNT).map(move |i| format!("{p}_value_{i}"))
    }
    fn dists(p: &str) -> impl Iterator<Item = String> + '_ {
        (1..=NEIGHBOR_COUNT).map(move |i| format!("{p}_distance_{i}"))
    }
    let mut names: Vec<String> = match set {
        PredictorSetId::Set1 => values(product_a).chain(dists(product_a)).collect(),
        PredictorSetId::Set2 => values(product_b).chain(dists(product_b)).collect(),
        PredictorSetId::Set3 => values(product_a)
            .chain(values(product_b))
            .chain(dists(product_a))
            .chain(dists(product_b))
            .collect(),
    };
    names.push("elevation".to_string());
    names
}

/// Builds the feature table of one predictor set.
///
/// `products[0]` is product A and `products[1]` (when present) product B.
/// Set 1 uses A, set 2 uses B, set 3 uses both. A row is emitted for each
/// (station, month) with a non-missing observation and values at all four
/// neighbors of every product used; other rows are dropped and counted.
pub fn assemble_features(
    stations: &[Station],
    observations: &[Observation],
    products: &[GridProduct],
    set: PredictorSetId,
) -> Result<FeatureTable> {
    if products.is_empty() || products.len() > 2 {
        return Err(Error::invalid(format!(
            "expected one or two gridded products, got {}",
            products.len()
        )));
    }
    if products.len() < set.products_required() {
        return Err(Error::invalid(format!(
            "predictor {set} requires two gridded products (product A and product B), only one supplied"
        )));
    }
    let used: Vec<&GridProduct> = match set {
        PredictorSetId::Set1 => vec![&products[0]],
        PredictorSetId::Set2 => vec![&products[1]],
        PredictorSetId::Set3 => vec![&products[0], &products[1]],
    };

    let mut by_id: HashMap<&str, &Station> = HashMap::new();
    for s in stations {
        s.location.validate()?;
        if !s.elevation_m.is_finite() {
            return Err(Error::invalid(format!("station {} has no finite elevation", s.id)));
        }
        if by_id.insert(s.id.as_str(), s).is_some() {
            return Err(Error::invalid(format!("duplicate station id {}", s.id)));
        }
    }
    for o in observations {
        if !by_id.contains_key(o.station_id.as_str()) {
            return Err(Error::invalid(format!(
                "observation references unknown station {}",
                o.station_id
            )));
        }
    }

    let indexes: Vec<SpatialIndex> = used.iter().map(|p| p.index()).collect::<Result<_>>()?;

    let mut sorted_stations: Vec<&Station> = stations.iter().collect();
    sorted_stations.sort_by(|a, b| a.id.cmp(&b.id));
    let neighbors: HashMap<&str, Vec<NeighborSet>> = sorted_stations
        .par_iter()
        .map(|s| {
            let sets = indexes
                .iter()
                .map(|ix| nearest_four(ix, s.location))
                .collect::<Result<Vec<_>>>()?;
            Ok((s.id.as_str(), sets))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let mut obs: Vec<&Observation> = observations.iter().collect();
    obs.sort_by(|a, b| a.station_id.cmp(&b.station_id).then(a.period.cmp(&b.period)));

    let mut drops = DropReport::default();
    let mut rows = Vec::with_capacity(obs.len());
    for o in obs {
        if o.is_missing() || !o.precip_mm.is_finite() || o.precip_mm < 0.0 {
            drops.missing_observation += 1;
            continue;
        }
        let station = by_id[o.station_id.as_str()];
        let nsets = &neighbors[o.station_id.as_str()];
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(used.len());
        let mut complete = true;
        for (p, ns) in used.iter().zip(nsets) {
            let v: Option<Vec<f64>> = ns
                .neighbors
                .iter()
                .map(|n| p.value(n.grid_index, o.period))
                .collect();
            match v {
                Some(v) => values.push(v),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            drops.missing_product_value += 1;
            continue;
        }
        let mut features = Vec::with_capacity(set.n_features());
        for v in &values {
            features.extend_from_slice(v);
        }
        for ns in nsets {
            features.extend(ns.neighbors.iter().map(|n| n.distance_m));
        }
        features.push(station.elevation_m);
        debug_assert_eq!(features.len(), set.n_features());
        rows.push(FeatureRow {
            station_id: o.station_id.clone(),
            period: o.period,
            features,
            target: o.precip_mm,
        });
    }

    let b_name = products.get(1).map(|p| p.name.as_str()).unwrap_or("");
    Ok(FeatureTable {
        set,
        feature_names: feature_names(set, &products[0].name, b_name),
        rows,
        drops,
    })
}

/// Total order on neighbor lists used by tests and oracles.
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance_m
        .total_cmp(&b.distance_m)
        .then(a.grid_index.cmp(&b.grid_index))
}
