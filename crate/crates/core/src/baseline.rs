//! Threshold-triggered benchmark: refill toward field capacity once the
//! root zone drops below the lower bound, net of the coming days' rain.

use serde::{Deserialize, Serialize};

use crate::agronomy::TargetZone;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub tz: TargetZone,
    /// Days of forecast rain credited against the deficit.
    pub lookahead_days: usize,
}

impl TriggerConfig {
    pub fn new(tz: TargetZone) -> Self {
        Self { tz, lookahead_days: 4 }
    }
}

/// Rate (mm/day) for a morning reading `theta_rz` over rooting depth `z_r`
/// (m). `rain_ahead` lists forecast rain (mm) from tomorrow on; only the
/// first `lookahead_days` entries count.
pub fn triggered_rate(theta_rz: f64, z_r: f64, rain_ahead: &[f64], cfg: &TriggerConfig) -> f64 {
    if theta_rz >= cfg.tz.lower {
        return 0.0;
    }
    let rain: f64 = rain_ahead.iter().take(cfg.lookahead_days).sum();
    ((cfg.tz.upper - theta_rz) * z_r * 1000.0 - rain).max(0.0)
}
