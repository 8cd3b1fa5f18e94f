use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::weather::ForecastNoise;
use crate::agronomy::CropParams;
use crate::error::{Error, Result};
use crate::field::{study_zones, ZoneSpec};
use crate::scheduler_mpc::{MpcParams, SolverOptions, WaterUnit};

/// Rooting depth by calendar date: shallow through the switch day, deep
/// afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootSchedule {
    pub shallow: f64,
    pub deep: f64,
    pub switch_month: u32,
    pub switch_day: u32,
}

impl Default for RootSchedule {
    fn default() -> Self {
        Self { shallow: 0.5, deep: 1.0, switch_month: 7, switch_day: 15 }
    }
}

impl RootSchedule {
    pub fn depth(&self, date: NaiveDate) -> f64 {
        if (date.month(), date.day()) <= (self.switch_month, self.switch_day) {
            self.shallow
        } else {
            self.deep
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q_upper: f64,
    pub q_lower: f64,
    pub r_u: f64,
    pub r_c: f64,
    #[serde(default)]
    pub water_unit: WaterUnit,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { q_upper: 2.2e7, q_lower: 2.0e7, r_u: 9000.0, r_c: 1000.0, water_unit: WaterUnit::Metre }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneConfig {
    #[serde(flatten)]
    pub spec: ZoneSpec,
    /// Root-zone moisture at the start of the run.
    pub initial_theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeasonConfig {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub mad: f64,
    pub horizon: usize,
    /// Seeds forecast errors and process noise.
    pub seed: u64,
    /// Process noise on ψ in the truth simulators (m).
    pub process_noise_std: f64,
    pub forecast: ForecastNoise,
    pub root_depth: RootSchedule,
    pub crop: CropParams,
    pub costs: CostWeights,
    pub solver: SolverOptions,
    pub zones: Vec<ZoneConfig>,
    /// Run zone tasks on the rayon pool.
    pub parallel: bool,
}

impl Default for SeasonConfig {
    /// 5 May to 4 September with the study zones starting at field capacity.
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2015, 5, 5).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2015, 9, 4).expect("valid date"),
            mad: 0.65,
            horizon: 14,
            seed: 0,
            process_noise_std: 0.01,
            forecast: ForecastNoise::default(),
            root_depth: RootSchedule::default(),
            crop: CropParams::default(),
            costs: CostWeights::default(),
            solver: SolverOptions::default(),
            zones: study_zones().into_iter().map(|spec| ZoneConfig { initial_theta: spec.theta_fc, spec }).collect(),
            parallel: true,
        }
    }
}

impl SeasonConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SeasonConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.end < self.start {
            return Err(Error::Config(format!("season ends {} before it starts {}", self.end, self.start)));
        }
        if !(self.mad > 0.0 && self.mad <= 1.0) {
            return Err(Error::Config(format!("mad {} outside (0, 1]", self.mad)));
        }
        if self.horizon == 0 || self.zones.is_empty() {
            return Err(Error::Config("horizon and zone list must be non-empty".into()));
        }
        Ok(())
    }

    pub fn days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn mpc_params(&self, zone: &ZoneSpec) -> Result<MpcParams> {
        let c = &self.costs;
        Ok(MpcParams {
            horizon: self.horizon,
            q_upper: c.q_upper,
            q_lower: c.q_lower,
            r_u: c.r_u,
            r_c: c.r_c,
            u_min: zone.u_min,
            u_max: zone.u_max,
            tz: zone.target_zone(self.mad)?,
            water_unit: c.water_unit,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = SeasonConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(SeasonConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = SeasonConfig::from_toml_str("mad = 0.4\nstart = \"2015-06-01\"\n").unwrap();
        assert_eq!(partial.mad, 0.4);
        assert_eq!(partial.zones.len(), 3);
        assert!(SeasonConfig::from_toml_str("mad = 1.5").is_err());
    }

    #[test]
    fn root_switch() {
        let r = RootSchedule::default();
        assert_eq!(r.depth(NaiveDate::from_ymd_opt(2015, 7, 15).unwrap()), 0.5);
        assert_eq!(r.depth(NaiveDate::from_ymd_opt(2015, 7, 16).unwrap()), 1.0);
    }
}
