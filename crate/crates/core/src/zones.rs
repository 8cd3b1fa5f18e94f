//! Management-zone delineation: crop-label partition, min-max normalization,
//! k-means with k chosen by the elbow of the within-cluster sum of squares,
//! and majority-vote mapping onto the pivot's control grid.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agrohydro::SoilHydraulicParams;
use crate::error::{Error, Result};

const MAX_LLOYD_ITERATIONS: usize = 300;
const CENTROID_SHIFT_TOL: f64 = 1e-9;
pub const DEFAULT_RESTARTS: usize = 10;
/// Relative WCSS improvement a step to k clusters must exceed to count.
pub const DEFAULT_ELBOW_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub cell_id: u64,
    pub crop: String,
    /// Elevation (m).
    pub elevation: f64,
    pub params: SoilHydraulicParams,
}

impl Cell {
    /// The six clustering attributes: five hydraulic parameters, then
    /// elevation.
    pub fn features(&self) -> [f64; 6] {
        let p = &self.params;
        [p.theta_r, p.theta_s, p.alpha, p.n, p.k_s, self.elevation]
    }
}

/// Cell layout. Cell ids enumerate the layout row-major: ring (or row)
/// first, then sector (or column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    Polar { radial: usize, azimuthal: usize },
    Rectangular { rows: usize, cols: usize },
}

impl Geometry {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            Geometry::Polar { radial, azimuthal } => (radial, azimuthal),
            Geometry::Rectangular { rows, cols } => (rows, cols),
        }
    }

    pub fn cell_count(&self) -> usize {
        let (a, b) = self.dims();
        a * b
    }

    fn same_kind(&self, other: &Geometry) -> bool {
        matches!(
            (self, other),
            (Geometry::Polar { .. }, Geometry::Polar { .. })
                | (Geometry::Rectangular { .. }, Geometry::Rectangular { .. })
        )
    }

    /// Parses `RxA`, e.g. `12x45`, as a polar layout.
    pub fn parse_polar(s: &str) -> Result<Self> {
        let (r, a) =
            s.split_once(['x', 'X']).ok_or_else(|| Error::InvalidParameter(format!("geometry '{s}' is not RxA")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::InvalidParameter(format!("geometry '{s}' is not RxA")))
        };
        Ok(Geometry::Polar { radial: parse(r)?, azimuthal: parse(a)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGrid {
    pub cells: Vec<Cell>,
    pub geometry: Geometry,
}

impl AttributeGrid {
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::InvalidParameter("attribute grid has no cells".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.cells {
            if !seen.insert(c.cell_id) {
                return Err(Error::InvalidParameter(format!("duplicate cell id {}", c.cell_id)));
            }
            if c.features().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("cell {} has non-finite attributes", c.cell_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneMap {
    /// Cell id to zone index, zones numbered from 1.
    pub assignments: BTreeMap<u64, usize>,
    /// Mean raw attribute vector per zone, `centroids[z - 1]` for zone `z`.
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
}

impl ZoneMap {
    pub fn zone_indices(&self) -> std::collections::BTreeSet<usize> {
        self.assignments.values().copied().collect()
    }
}

/// Per-column min-max scaling to [0, 1]; constant columns map to 0.
pub fn normalize(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = features.first() else {
        return Vec::new();
    };
    let dims = first.len();
    let mut lo = vec![f64::INFINITY; dims];
    let mut hi = vec![f64::NEG_INFINITY; dims];
    for row in features {
        for (j, &v) in row.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    features
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let range = hi[j] - lo[j];
                    if range > 0.0 {
                        ((v - lo[j]) / range).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of each row, from 0.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
    pub iterations: usize,
    /// WCSS after each assignment step; non-increasing.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_matrix(data: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Clustering("k must be at least 1".into()));
    }
    if data.len() < k {
        return Err(Error::Clustering(format!("{} rows cannot form {k} clusters", data.len())));
    }
    let dims = data[0].len();
    if data.iter().any(|r| r.len() != dims || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Clustering("rows must be finite and equally long".into()));
    }
    Ok(())
}

fn plus_plus_seeds(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![data[rng.gen_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..data.len())
        };
        centroids.push(data[next].clone());
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn assign(data: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut wcss = 0.0;
    for (x, label) in data.iter().zip(labels.iter_mut()) {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(j, c)| (j, sq_dist(x, c)))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        *label = best;
        wcss += d;
    }
    wcss
}

/// Lloyd's algorithm from k-means++ seeds. An empty cluster is re-seeded at
/// the point farthest from its current centroid.
pub fn kmeans(data: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    check_matrix(data, k)?;
    let dims = data[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(data, k, &mut rng);
    let mut labels = vec![0usize; data.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let wcss = assign(data, &centroids, &mut labels);
        history.push(wcss);
        iterations += 1;

        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in data.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            let next: Vec<f64> = if counts[j] == 0 {
                let far = data
                    .iter()
                    .zip(&labels)
                    .map(|(x, &l)| sq_dist(x, &centroids[l]))
                    .enumerate()
                    .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
                    .0;
                labels[far] = j;
                data[far].clone()
            } else {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            };
            shift = shift.max(sq_dist(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        if shift < CENTROID_SHIFT_TOL || iterations >= MAX_LLOYD_ITERATIONS {
            break;
        }
    }
    let wcss = assign(data, &centroids, &mut labels);
    history.push(wcss);
    Ok(KMeansResult { labels, centroids, wcss, iterations, history })
}

/// Lowest-WCSS run over `restarts` seeds derived from `seed`. Restarts run in
/// parallel; ties resolve to the earliest restart, so the result equals the
/// sequential scan.
pub fn kmeans_best_of(data: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    check_matrix(data, k)?;
    let runs: Vec<KMeansResult> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| kmeans(data, k, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r)))
        .collect::<Result<_>>()?;
    Ok(runs
        .into_iter()
        .reduce(|best, cur| if cur.wcss < best.wcss { cur } else { best })
        .expect("at least one restart"))
}

/// WCSS for k = 1..=k_max, each the best of [`DEFAULT_RESTARTS`] runs.
pub fn wcss_curve(data: &[Vec<f64>], k_max: usize, seed: u64) -> Result<Vec<f64>> {
    (1..=k_max.min(data.len())).map(|k| kmeans_best_of(data, k, seed, DEFAULT_RESTARTS).map(|r| r.wcss)).collect()
}

/// Largest k whose step from k − 1 clusters cuts the WCSS by more than
/// `threshold` (relative). Returns 1 when no step qualifies.
pub fn elbow_select_with(data: &[Vec<f64>], k_max: usize, seed: u64, threshold: f64) -> Result<usize> {
    if k_max < 2 {
        return Err(Error::InvalidParameter(format!("k_max {k_max} must be at least 2")));
    }
    check_matrix(data, 1)?;
    let curve = wcss_curve(data, k_max, seed)?;
    let scale = curve[0].max(f64::MIN_POSITIVE);
    let mut chosen = 1;
    for k in 2..=curve.len() {
        let prev = curve[k - 2];
        // Drops below round-off of the total spread are not improvements.
        if prev <= 1e-12 * scale {
            break;
        }
        if (prev - curve[k - 1]) / prev > threshold {
            chosen = k;
        }
    }
    Ok(chosen)
}

pub fn elbow_select(data: &[Vec<f64>], k_max: usize, seed: u64) -> Result<usize> {
    elbow_select_with(data, k_max, seed, DEFAULT_ELBOW_THRESHOLD)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelineationOptions {
    pub k_max: usize,
    pub seed: u64,
    pub elbow_threshold: f64,
}

impl Default for DelineationOptions {
    fn default() -> Self {
        Self { k_max: 8, seed: 0, elbow_threshold: DEFAULT_ELBOW_THRESHOLD }
    }
}

/// Crop-label partition, then per-label normalize + elbow + k-means.
/// Zones are numbered from 1 across labels (labels in sorted order), and
/// within a label in order of each cluster's first cell.
pub fn delineate(grid: &AttributeGrid, k_max: usize, seed: u64) -> Result<ZoneMap> {
    delineate_with(grid, &DelineationOptions { k_max, seed, ..Default::default() })
}

pub fn delineate_with(grid: &AttributeGrid, opts: &DelineationOptions) -> Result<ZoneMap> {
    grid.validate()?;
    let mut by_crop: BTreeMap<&str, Vec<&Cell>> = BTreeMap::new();
    for c in &grid.cells {
        by_crop.entry(c.crop.as_str()).or_default().push(c);
    }
    let mut assignments = BTreeMap::new();
    let mut centroids = Vec::new();
    for cells in by_crop.values() {
        let raw: Vec<Vec<f64>> = cells.iter().map(|c| c.features().to_vec()).collect();
        let data = normalize(&raw);
        let k = if data.len() < 2 { 1 } else { elbow_select_with(&data, opts.k_max, opts.seed, opts.elbow_threshold)? };
        let fit = kmeans_best_of(&data, k, opts.seed, DEFAULT_RESTARTS)?;
        // Relabel clusters by first appearance; drop clusters left empty.
        let mut order: Vec<Option<usize>> = vec![None; k];
        let base = centroids.len();
        let mut next = 0;
        for &l in &fit.labels {
            if order[l].is_none() {
                order[l] = Some(next);
                next += 1;
            }
        }
        let mut sums = vec![vec![0.0; 6]; next];
        let mut counts = vec![0usize; next];
        for ((cell, x), &l) in cells.iter().zip(&raw).zip(&fit.labels) {
            let z = order[l].expect("seen label");
            assignments.insert(cell.cell_id, base + z + 1);
            counts[z] += 1;
            for (s, v) in sums[z].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (s, n) in sums.into_iter().zip(counts) {
            centroids.push(s.into_iter().map(|v| v / n as f64).collect());
        }
    }
    let k = centroids.len();
    Ok(ZoneMap { assignments, centroids, k })
}

/// Majority vote of fine cells onto a coarser layout of the same kind. Fine
/// cell (i, j) lands in coarse cell (⌊(i + ½)·R/r⌋, ⌊(j + ½)·A/a⌋); ties go
/// to the lower zone index. Centroids are carried over unchanged.
pub fn map_to_pivot(zmap: &ZoneMap, fine: &Geometry, pivot: &Geometry) -> Result<ZoneMap> {
    if !fine.same_kind(pivot) {
        return Err(Error::InvalidParameter("fine and pivot layouts differ in kind".into()));
    }
    let (fr, fa) = fine.dims();
    let (pr, pa) = pivot.dims();
    let mut votes: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); pr * pa];
    for (&id, &zone) in &zmap.assignments {
        let id = id as usize;
        if id >= fr * fa {
            return Err(Error::InvalidParameter(format!("cell id {id} outside the fine layout")));
        }
        let (i, j) = (id / fa, id % fa);
        let pi = (((i as f64 + 0.5) * pr as f64 / fr as f64) as usize).min(pr - 1);
        let pj = (((j as f64 + 0.5) * pa as f64 / fa as f64) as usize).min(pa - 1);
        *votes[pi * pa + pj].entry(zone).or_default() += 1;
    }
    let mut assignments = BTreeMap::new();
    for (cell, tally) in votes.iter().enumerate() {
        // Zones iterate ascending; only a strictly larger count takes over.
        let winner = tally
            .iter()
            .fold(None, |best: Option<(usize, usize)>, (&z, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((z, n)),
            })
            .ok_or_else(|| Error::InvalidParameter(format!("pivot cell {cell} covers no fine cell")))?;
        assignments.insert(cell as u64, winner.0);
    }
    Ok(ZoneMap { assignments, centroids: zmap.centroids.clone(), k: zmap.k })
}

#[derive(Debug, Serialize, Deserialize)]
struct CellRecord {
    cell_id: u64,
    crop: String,
    elev: f64,
    theta_r: f64,
    theta_s: f64,
    alpha: f64,
    n: f64,
    ks: f64,
}

/// Reads cells from CSV with header `cell_id,crop,elev,theta_r,theta_s,alpha,n,ks`.
pub fn read_cells(path: &Path) -> Result<Vec<Cell>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut cells = Vec::new();
    for (i, rec) in reader.deserialize::<CellRecord>().enumerate() {
        let r = rec.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        let params = SoilHydraulicParams::new(r.theta_r, r.theta_s, r.alpha, r.n, r.ks)
            .map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        cells.push(Cell { cell_id: r.cell_id, crop: r.crop, elevation: r.elev, params });
    }
    Ok(cells)
}

pub fn write_cells(path: &Path, cells: &[Cell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        let p = c.params;
        w.serialize(CellRecord {
            cell_id: c.cell_id,
            crop: c.crop.clone(),
            elev: c.elevation,
            theta_r: p.theta_r,
            theta_s: p.theta_s,
            alpha: p.alpha,
            n: p.n,
            ks: p.k_s,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_zone_map(path: &Path, zmap: &ZoneMap) -> Result<()> {
    let json = serde_json::to_string_pretty(zmap)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
