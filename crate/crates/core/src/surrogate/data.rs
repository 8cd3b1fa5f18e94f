//! Open-loop training data from the Richards simulator.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DayInput, Record, SampleWindow, FEATURE_COUNT};
use crate::agrohydro::{DailyForcing, RichardsModel};
use crate::error::{Error, Result};

/// Sampling ranges for the random daily drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingRanges {
    /// Reference evapotranspiration (mm/day).
    pub et0: (f64, f64),
    pub kc: (f64, f64),
    /// Irrigation depth on irrigated days (mm/day).
    pub irrigation: (f64, f64),
    pub irrigation_probability: f64,
    pub rain_probability: f64,
    /// Mean depth of a rain day (mm), exponentially distributed.
    pub rain_mean: f64,
    pub root_depths: Vec<f64>,
    /// Chance that an episode starting at the shallowest depth deepens to
    /// the deepest one partway through.
    pub root_switch_probability: f64,
}

impl ForcingRanges {
    pub fn for_irrigation(u_min: f64, u_max: f64) -> Self {
        Self {
            et0: (0.1, 8.99),
            kc: (0.4, 1.02),
            irrigation: (u_min, u_max),
            irrigation_probability: 0.2,
            rain_probability: 0.15,
            rain_mean: 6.0,
            root_depths: vec![0.5, 1.0],
            root_switch_probability: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.et0.0 >= 0.0
            && self.et0.0 <= self.et0.1
            && self.kc.0 >= 0.0
            && self.kc.0 <= self.kc.1
            && self.irrigation.0 >= 0.0
            && self.irrigation.0 <= self.irrigation.1
            && (0.0..=1.0).contains(&self.irrigation_probability)
            && (0.0..=1.0).contains(&self.rain_probability)
            && (0.0..=1.0).contains(&self.root_switch_probability)
            && self.rain_mean > 0.0
            && !self.root_depths.is_empty()
            && self.root_depths.iter().all(|z| *z > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid forcing ranges {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub episodes: usize,
    pub days: usize,
    pub lag: usize,
    /// Process noise on ψ (m).
    pub noise_std: f64,
    /// Range of the initial root-zone moisture.
    pub initial_moisture: (f64, f64),
    pub seed: u64,
}

/// One open-loop run. `y[t]` is root-zone moisture at the start of day `t`
/// and `y_end[t]` at its end, both over day `t`'s rooting depth; they differ
/// from `y[t + 1]` only on the day the roots deepen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub inputs: Vec<DayInput>,
    pub y: Vec<f64>,
    pub y_end: Vec<f64>,
}

impl Episode {
    pub fn record(&self, t: usize) -> Record {
        self.inputs[t].record(self.y[t])
    }
}

/// Daily drivers for one episode: a root-depth schedule plus random
/// irrigation, rain, et0 and kc.
pub fn sample_drivers<R: Rng + ?Sized>(ranges: &ForcingRanges, days: usize, rng: &mut R) -> Result<Vec<DailyForcing>> {
    ranges.validate()?;
    let shallow = ranges.root_depths.iter().cloned().fold(f64::INFINITY, f64::min);
    let deep = ranges.root_depths.iter().cloned().fold(0.0, f64::max);
    let start_depth = ranges.root_depths[rng.gen_range(0..ranges.root_depths.len())];
    let switch_day = if start_depth == shallow && deep > shallow && rng.gen_bool(ranges.root_switch_probability) {
        rng.gen_range(1..days.max(2))
    } else {
        usize::MAX
    };
    let rain_dist = Exp::new(1.0 / ranges.rain_mean).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut out = Vec::with_capacity(days);
    for t in 0..days {
        let irrigation = if rng.gen_bool(ranges.irrigation_probability) {
            rng.gen_range(ranges.irrigation.0..=ranges.irrigation.1)
        } else {
            0.0
        };
        let rain = if rng.gen_bool(ranges.rain_probability) { rain_dist.sample(rng) } else { 0.0 };
        out.push(DailyForcing {
            irrigation,
            rain,
            et0: rng.gen_range(ranges.et0.0..=ranges.et0.1),
            kc: rng.gen_range(ranges.kc.0..=ranges.kc.1),
            z_r: if t >= switch_day { deep } else { start_depth },
            ev: 0.0,
        });
    }
    Ok(out)
}

/// Runs one episode with drivers drawn from `ranges`.
pub fn simulate_episode<R: Rng + ?Sized>(
    model: &RichardsModel,
    ranges: &ForcingRanges,
    days: usize,
    initial_moisture: (f64, f64),
    noise_std: f64,
    rng: &mut R,
) -> Result<Episode> {
    let drivers = sample_drivers(ranges, days, rng)?;
    let theta0 = rng.gen_range(initial_moisture.0..=initial_moisture.1);
    let first_depth = drivers.first().map_or(ranges.root_depths[0], |f| f.z_r);
    let mut state = model.hydrostatic_state_for(theta0, first_depth)?;
    let mut inputs = Vec::with_capacity(days);
    let mut y = Vec::with_capacity(days);
    let mut y_end = Vec::with_capacity(days);
    for forcing in &drivers {
        y.push(model.root_zone_moisture(&state, forcing.z_r)?);
        let out = model.simulate_day(&state, forcing, noise_std, rng)?;
        state = out.state;
        y_end.push(model.root_zone_moisture(&state, forcing.z_r)?);
        inputs.push(DayInput {
            water: forcing.irrigation + forcing.rain,
            kc: forcing.kc,
            et0: forcing.et0,
            z_r: forcing.z_r,
        });
    }
    Ok(Episode { inputs, y, y_end })
}

/// Independent episodes, each seeded from `(settings.seed, index)`. They run
/// in parallel and come back in index order; failed episodes are skipped
/// and counted in the log.
pub fn generate_episodes(model: &RichardsModel, ranges: &ForcingRanges, settings: &GenerationSettings) -> Vec<Episode> {
    let results: Vec<Result<Episode>> = (0..settings.episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(i as u64 + 1);
            simulate_episode(model, ranges, settings.days, settings.initial_moisture, settings.noise_std, &mut rng)
        })
        .collect();
    let mut failed = 0;
    let episodes: Vec<Episode> = results
        .into_iter()
        .filter_map(|r| match r {
            Ok(e) => Some(e),
            Err(err) => {
                failed += 1;
                log::debug!("episode failed: {err}");
                None
            }
        })
        .collect();
    if failed > 0 {
        log::warn!("{failed} of {} training episodes failed and were skipped", settings.episodes);
    }
    episodes
}

/// Sliding windows of `lag + 1` records, each targeting the next day.
pub fn episode_windows(episodes: &[Episode], lag: usize) -> Vec<SampleWindow> {
    let mut out = Vec::new();
    for (e, ep) in episodes.iter().enumerate() {
        for t in lag..ep.inputs.len() {
            out.push(SampleWindow {
                episode: e,
                records: (t - lag..=t).map(|j| ep.record(j)).collect(),
                target: ep.y_end[t],
            });
        }
    }
    out
}

pub fn generate_training_data(
    model: &RichardsModel,
    ranges: &ForcingRanges,
    settings: &GenerationSettings,
) -> Vec<SampleWindow> {
    episode_windows(&generate_episodes(model, ranges, settings), settings.lag)
}

/// CSV with one row per window: `episode`, the records as `<feature>_<step>`
/// columns, then `target`.
pub fn write_windows_csv(path: &Path, windows: &[SampleWindow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let steps = windows.first().map_or(0, |s| s.records.len());
    let mut header = vec!["episode".to_string()];
    for s in 0..steps {
        for name in super::FEATURE_NAMES {
            header.push(format!("{name}_{s}"));
        }
    }
    header.push("target".into());
    w.write_record(&header)?;
    for s in windows {
        let mut row = vec![s.episode.to_string()];
        row.extend(s.records.iter().flat_map(|r| r.iter().map(|v| v.to_string())));
        row.push(s.target.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_windows_csv(path: &Path) -> Result<Vec<SampleWindow>> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    if width < 2 || (width - 2) % FEATURE_COUNT != 0 {
        return Err(Error::Parse { line: 1, message: "header does not describe whole records".into() });
    }
    let steps = (width - 2) / FEATURE_COUNT;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64> {
            row[k].parse::<f64>().map_err(|e| Error::Parse { line, message: e.to_string() })
        };
        let episode = row[0].parse::<usize>().map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let mut records = Vec::with_capacity(steps);
        for s in 0..steps {
            let mut rec = [0.0; FEATURE_COUNT];
            for (j, v) in rec.iter_mut().enumerate() {
                *v = num(1 + s * FEATURE_COUNT + j)?;
            }
            records.push(rec);
        }
        out.push(SampleWindow { episode, records, target: num(width - 1)? });
    }
    Ok(out)
}
