//! Synthetic stand-in for the three-zone study quadrant: per-zone hydraulic
//! parameters, moisture thresholds and irrigation-rate ranges, and a fine
//! attribute grid for delineation tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agrohydro::{RichardsModel, SoilHydraulicParams};
use crate::agronomy::TargetZone;
use crate::error::Result;
use crate::zones::{AttributeGrid, Cell, Geometry};

/// Static description of one management zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub name: String,
    pub soil: String,
    pub params: SoilHydraulicParams,
    pub theta_fc: f64,
    pub theta_pwp: f64,
    /// Mean elevation (m).
    pub elevation: f64,
    /// Irrigation-rate bounds when the pivot runs (mm/day).
    pub u_min: f64,
    pub u_max: f64,
}

/// Depletion fraction at which the simulated crop starts to reduce uptake.
/// Fixed per zone so that one surrogate serves every management MAD.
pub const UPTAKE_STRESS_MAD: f64 = 0.5;

impl ZoneSpec {
    pub fn target_zone(&self, mad: f64) -> Result<TargetZone> {
        TargetZone::new(self.theta_fc, self.theta_pwp, mad)
    }

    /// Richards model of the zone on the default grid.
    pub fn richards_model(&self) -> Result<RichardsModel> {
        RichardsModel::new(self.params, &self.target_zone(UPTAKE_STRESS_MAD)?)
    }
}

/// The three zones of the study quadrant. Retention curves put θ(−3.3 m)
/// near field capacity and θ(−150 m) near the wilting point.
pub fn study_zones() -> Vec<ZoneSpec> {
    vec![
        ZoneSpec {
            name: "MZ1".into(),
            soil: "loam".into(),
            params: SoilHydraulicParams { theta_r: 0.08, theta_s: 0.43, alpha: 1.1, n: 1.4, k_s: 0.25 },
            theta_fc: 0.28,
            theta_pwp: 0.12,
            elevation: 889.0,
            u_min: 4.0,
            u_max: 52.0,
        },
        ZoneSpec {
            name: "MZ2".into(),
            soil: "loam".into(),
            params: SoilHydraulicParams { theta_r: 0.075, theta_s: 0.42, alpha: 1.0, n: 1.42, k_s: 0.20 },
            theta_fc: 0.28,
            theta_pwp: 0.12,
            elevation: 888.0,
            u_min: 4.3,
            u_max: 59.6,
        },
        ZoneSpec {
            name: "MZ3".into(),
            soil: "sandy clay loam".into(),
            params: SoilHydraulicParams { theta_r: 0.10, theta_s: 0.39, alpha: 0.71, n: 1.35, k_s: 0.15 },
            theta_fc: 0.30,
            theta_pwp: 0.16,
            elevation: 888.5,
            u_min: 5.0,
            u_max: 62.3,
        },
    ]
}

/// Fine attribute grid of one pivot quadrant with three populations laid
/// out as contiguous azimuthal sectors (MZ1, MZ2, MZ3 in order), each
/// attribute jittered by 2 % multiplicative noise. Returns the grid and the
/// true zone (0-based) of every cell.
pub fn synthetic_quadrant(radial: usize, azimuthal: usize, seed: u64) -> (AttributeGrid, Vec<usize>) {
    let zones = study_zones();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.02).expect("valid std");
    let mut cells = Vec::with_capacity(radial * azimuthal);
    let mut truth = Vec::with_capacity(radial * azimuthal);
    for r in 0..radial {
        for a in 0..azimuthal {
            let z = (3 * a / azimuthal).min(2);
            // Sector borders wander by a cell so populations are not
            // perfectly aligned with the grid.
            let z = if a > 0 && 3 * (a - 1) / azimuthal != 3 * a / azimuthal && rng.gen_bool(0.5) { z - 1 } else { z };
            let spec = &zones[z];
            let mut j = |v: f64| v * (1.0 + jitter.sample(&mut rng));
            let p = spec.params;
            let params = SoilHydraulicParams {
                theta_r: j(p.theta_r),
                theta_s: j(p.theta_s),
                alpha: j(p.alpha),
                n: 1.0 + j(p.n - 1.0),
                k_s: j(p.k_s),
            };
            cells.push(Cell {
                cell_id: (r * azimuthal + a) as u64,
                crop: "wheat".into(),
                elevation: spec.elevation + 0.1 * jitter.sample(&mut rng),
                params,
            });
            truth.push(z);
        }
    }
    let grid = AttributeGrid { cells, geometry: Geometry::Polar { radial, azimuthal } };
    (grid, truth)
}
