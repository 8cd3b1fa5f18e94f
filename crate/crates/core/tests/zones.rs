use irrsched_core::agrohydro::SoilHydraulicParams;
use irrsched_core::field::synthetic_quadrant;
use irrsched_core::zones::{
    delineate, elbow_select, kmeans, kmeans_best_of, map_to_pivot, normalize, read_cells, write_cells, AttributeGrid,
    Cell, Geometry,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn blobs(centres: &[(f64, f64)], per: usize, std: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std).unwrap();
    centres
        .iter()
        .flat_map(|&(x, y)| {
            (0..per).map(|_| vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)]).collect::<Vec<_>>()
        })
        .collect()
}

fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

#[test]
fn two_blobs_recovered() {
    let data = blobs(&[(0.0, 0.0), (10.0, 10.0)], 50, 0.5, 1);
    let r = kmeans_best_of(&data, 2, 7, 10).unwrap();
    for half in [&data[..50], &data[50..]] {
        let m = mean(half);
        let close = r.centroids.iter().any(|c| (c[0] - m[0]).abs() < 0.1 && (c[1] - m[1]).abs() < 0.1);
        assert!(close, "no centroid near {m:?}: {:?}", r.centroids);
    }
}

#[test]
fn elbow_finds_three_blobs() {
    let data = blobs(&[(0.0, 0.0), (10.0, 0.0), (5.0, 9.0)], 40, 0.7, 2);
    assert_eq!(elbow_select(&data, 8, 11).unwrap(), 3);
    let doubled: Vec<Vec<f64>> = data.iter().chain(data.iter()).cloned().collect();
    assert_eq!(elbow_select(&doubled, 8, 11).unwrap(), 3);
}

#[test]
fn elbow_single_blob() {
    let data = blobs(&[(3.0, 3.0)], 120, 1.0, 3);
    assert_eq!(elbow_select(&data, 8, 5).unwrap(), 1);
    let doubled: Vec<Vec<f64>> = data.iter().chain(data.iter()).cloned().collect();
    assert_eq!(elbow_select(&doubled, 8, 5).unwrap(), 1);
}

fn loam_cell(id: u64, crop: &str) -> Cell {
    Cell {
        cell_id: id,
        crop: crop.into(),
        elevation: 889.0,
        params: SoilHydraulicParams::new(0.08, 0.43, 1.1, 1.4, 0.25).unwrap(),
    }
}

#[test]
fn identical_cells_form_one_zone() {
    let grid = AttributeGrid {
        cells: (0..20).map(|i| loam_cell(i, "wheat")).collect(),
        geometry: Geometry::Polar { radial: 4, azimuthal: 5 },
    };
    let zm = delineate(&grid, 6, 0).unwrap();
    assert_eq!(zm.k, 1);
    assert!(zm.assignments.values().all(|&z| z == 1));
}

#[test]
fn crop_labels_split_zones() {
    let grid = AttributeGrid {
        cells: (0..20).map(|i| loam_cell(i, if i < 8 { "canola" } else { "wheat" })).collect(),
        geometry: Geometry::Polar { radial: 4, azimuthal: 5 },
    };
    let zm = delineate(&grid, 6, 0).unwrap();
    assert_eq!(zm.k, 2);
    assert_eq!(zm.zone_indices().len(), 2);
    assert!(zm.assignments.iter().all(|(&id, &z)| z == if id < 8 { 1 } else { 2 }));
}

#[test]
fn study_quadrant_three_zones() {
    let (grid, truth) = synthetic_quadrant(24, 90, 9);
    let zm = delineate(&grid, 8, 1).unwrap();
    assert_eq!(zm.k, 3);
    // Zones are numbered by first appearance, which follows the sector order.
    let agree = grid.cells.iter().zip(&truth).filter(|(c, &t)| zm.assignments[&c.cell_id] == t + 1).count();
    assert!(agree as f64 >= 0.95 * truth.len() as f64, "agreement {agree}/{}", truth.len());

    let pivot = Geometry::Polar { radial: 12, azimuthal: 45 };
    let coarse = map_to_pivot(&zm, &grid.geometry, &pivot).unwrap();
    assert_eq!(coarse.assignments.len(), 540);
    assert!(coarse.zone_indices().is_subset(&zm.zone_indices()));
    let same = map_to_pivot(&zm, &grid.geometry, &grid.geometry).unwrap();
    assert_eq!(same.assignments, zm.assignments);
}

#[test]
fn cell_csv_roundtrip() {
    let (grid, _) = synthetic_quadrant(3, 6, 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cells.csv");
    write_cells(&path, &grid.cells).unwrap();
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("cell_id,crop,elev,theta_r,theta_s,alpha,n,ks\n"));
    let back = read_cells(&path).unwrap();
    assert_eq!(back.len(), grid.cells.len());
    for (a, b) in back.iter().zip(&grid.cells) {
        assert_eq!(a.cell_id, b.cell_id);
        assert!((a.params.alpha - b.params.alpha).abs() < 1e-12);
    }
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-50.0..50.0f64, d), 4..40))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_in_unit_interval(data in matrix()) {
        for row in normalize(&data) {
            for v in row {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn normalize_is_idempotent(data in matrix()) {
        let once = normalize(&data);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn lloyd_wcss_never_increases(data in matrix(), k in 1usize..4, seed in 0u64..100) {
        let r = kmeans(&data, k, seed).unwrap();
        for w in r.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        prop_assert_eq!(kmeans(&data, k, seed).unwrap(), r);
    }

    #[test]
    fn zone_count_bounded(seed in 0u64..20, kmax in 2usize..5) {
        let (mut grid, _) = synthetic_quadrant(4, 9, seed);
        for c in grid.cells.iter_mut().filter(|c| c.cell_id % 2 == 0) {
            c.crop = "barley".into();
        }
        let zm = delineate(&grid, kmax, seed).unwrap();
        prop_assert!(zm.k <= kmax * 2);
        prop_assert_eq!(zm.assignments.len(), grid.cells.len());
        let idx: Vec<usize> = zm.zone_indices().into_iter().collect();
        prop_assert_eq!(idx, (1..=zm.k).collect::<Vec<_>>());
    }
}
