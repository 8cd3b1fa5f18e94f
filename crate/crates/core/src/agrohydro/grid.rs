use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of root water extraction (and root-zone averaging weight) assigned
/// to each quarter of the rooting depth, top quarter first.
pub const ROOT_QUARTER_WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

/// Vertical node layout of a soil column. Depth is positive downward, with
/// the first node at the surface and the last at the column bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoilColumnGrid {
    pub depth: f64,
    pub node_depths: Vec<f64>,
}

impl Default for SoilColumnGrid {
    /// 1.0 m column, 31 nodes: 0.025 m spacing to 0.5 m, then 0.05 m.
    fn default() -> Self {
        let mut nodes: Vec<f64> = (0..=20).map(|i| 0.025 * i as f64).collect();
        nodes.extend((1..=10).map(|i| 0.5 + 0.05 * i as f64));
        Self::from_depths(nodes).expect("default grid is valid")
    }
}

impl SoilColumnGrid {
    pub fn from_depths(node_depths: Vec<f64>) -> Result<Self> {
        if node_depths.len() < 2 {
            return Err(Error::InvalidParameter("grid needs at least two nodes".into()));
        }
        if node_depths[0] != 0.0 {
            return Err(Error::InvalidParameter("first node must be at the surface".into()));
        }
        if node_depths.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("node depths must be strictly increasing".into()));
        }
        Ok(Self { depth: *node_depths.last().unwrap(), node_depths })
    }

    pub fn uniform(depth: f64, node_count: usize) -> Result<Self> {
        if node_count < 2 || !(depth > 0.0) {
            return Err(Error::InvalidParameter("uniform grid needs depth > 0 and >= 2 nodes".into()));
        }
        let h = depth / (node_count - 1) as f64;
        let mut nodes: Vec<f64> = (0..node_count).map(|i| h * i as f64).collect();
        nodes[node_count - 1] = depth;
        Self::from_depths(nodes)
    }

    pub fn node_count(&self) -> usize {
        self.node_depths.len()
    }

    /// Control volume `[top, bottom]` of each node: midpoints between
    /// neighbours, with half cells at the surface and bottom.
    pub fn control_volumes(&self) -> Vec<(f64, f64)> {
        let z = &self.node_depths;
        let n = z.len();
        (0..n)
            .map(|i| {
                let top = if i == 0 { 0.0 } else { 0.5 * (z[i - 1] + z[i]) };
                let bottom = if i == n - 1 { z[i] } else { 0.5 * (z[i] + z[i + 1]) };
                (top, bottom)
            })
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.control_volumes().iter().map(|(a, b)| b - a).collect()
    }

    /// Distance between consecutive nodes.
    pub fn spacings(&self) -> Vec<f64> {
        self.node_depths.windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn check_root_depth(&self, z_r: f64) -> Result<()> {
        if !(z_r > 0.0) || z_r > self.depth + 1e-12 {
            return Err(Error::RootDepthExceedsColumn { z_r, depth: self.depth });
        }
        Ok(())
    }

    /// Per-node share of a depth-weighted quantity distributed over `[0, z_r]`
    /// with [`ROOT_QUARTER_WEIGHTS`]. Shares sum to one.
    pub fn root_zone_weights(&self, z_r: f64) -> Result<Vec<f64>> {
        self.check_root_depth(z_r)?;
        let quarter = z_r / 4.0;
        Ok(self
            .control_volumes()
            .iter()
            .map(|&(top, bottom)| {
                ROOT_QUARTER_WEIGHTS
                    .iter()
                    .enumerate()
                    .map(|(q, w)| {
                        let lo = q as f64 * quarter;
                        let hi = lo + quarter;
                        let overlap = (bottom.min(hi) - top.max(lo)).max(0.0);
                        w * overlap / quarter
                    })
                    .sum()
            })
            .collect())
    }
}

/// Depth-weighted root-zone moisture: 40/30/20/10 % of the mean moisture of
/// each successive quarter of `[0, z_r]`.
pub fn root_zone_moisture(theta_profile: &[f64], z_r: f64, grid: &SoilColumnGrid) -> Result<f64> {
    if theta_profile.len() != grid.node_count() {
        return Err(Error::InvalidParameter(format!(
            "profile has {} values for {} nodes",
            theta_profile.len(),
            grid.node_count()
        )));
    }
    let weights = grid.root_zone_weights(z_r)?;
    Ok(weights.iter().zip(theta_profile).map(|(w, t)| w * t).sum())
}
