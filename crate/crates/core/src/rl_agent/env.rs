use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reward, Action, Observation};
use crate::agrohydro::{DailyForcing, RichardsModel, SoilColumnState};
use crate::error::Result;
use crate::field::ZoneSpec;
use crate::scheduler_mpc::MpcParams;
use crate::surrogate::{sample_drivers, ForcingRanges};

/// Training environment of one zone: its Richards model, the cost weights
/// that define the reward and the distribution of episode drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneEnv {
    pub model: RichardsModel,
    pub params: MpcParams,
    /// Drivers per day; the irrigation fields are ignored.
    pub ranges: ForcingRanges,
    /// Process noise on ψ (m).
    pub noise_std: f64,
    /// Range of the initial root-zone moisture.
    pub initial_moisture: (f64, f64),
}

/// Outcome of one environment day.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub state: SoilColumnState,
    /// End-of-day root-zone moisture over the day's rooting depth.
    pub theta_rz: f64,
    pub reward: f64,
}

impl ZoneEnv {
    pub fn for_zone(zone: &ZoneSpec, mad: f64, noise_std: f64) -> Result<Self> {
        let tz = zone.target_zone(mad)?;
        let mut ranges = ForcingRanges::for_irrigation(zone.u_min, zone.u_max);
        ranges.irrigation_probability = 0.0;
        Ok(Self {
            model: zone.richards_model()?,
            params: MpcParams::new(tz, zone.u_min, zone.u_max),
            ranges,
            noise_std,
            initial_moisture: (zone.theta_pwp, zone.theta_fc),
        })
    }

    pub fn observe(&self, state: &SoilColumnState, forcing: &DailyForcing) -> Observation {
        Observation {
            theta_profile: self.model.theta_profile(state),
            et0: forcing.et0,
            kc: forcing.kc,
            z_r: forcing.z_r,
        }
    }

    /// Initial state and the episode's daily drivers.
    pub fn reset<R: Rng + ?Sized>(&self, days: usize, rng: &mut R) -> Result<(SoilColumnState, Vec<DailyForcing>)> {
        let drivers = sample_drivers(&self.ranges, days, rng)?;
        let theta0 = rng.gen_range(self.initial_moisture.0..=self.initial_moisture.1);
        let z_r = drivers.first().map_or(self.ranges.root_depths[0], |f| f.z_r);
        Ok((self.model.hydrostatic_state_for(theta0, z_r)?, drivers))
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &SoilColumnState,
        forcing: &DailyForcing,
        action: &Action,
        rng: &mut R,
    ) -> Result<EnvStep> {
        let forcing = DailyForcing { irrigation: action.u, ..*forcing };
        let next = self.model.simulate_day(state, &forcing, self.noise_std, rng)?.state;
        let theta_rz = self.model.root_zone_moisture(&next, forcing.z_r)?;
        Ok(EnvStep { reward: reward(theta_rz, action.c, action.u, &self.params), state: next, theta_rz })
    }
}
