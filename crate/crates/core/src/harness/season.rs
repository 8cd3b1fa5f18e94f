use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::SeasonConfig;
use super::report::{Method, MpcAudit, SeasonCosts, SeasonReport, TraceRow, ZoneSummary};
use super::weather::{perturb_forecast, WeatherRecord};
use crate::agrohydro::{DailyForcing, RichardsModel, SoilColumnState, ANAEROBIC_HEAD};
use crate::agronomy::{gdd, seasonal_yield, YieldOutcome};
use crate::baseline::{triggered_rate, TriggerConfig};
use crate::error::{Error, Result};
use crate::scheduler_mpc::{plan_cost, Forecast, MpcParams, ZoneContext};
use crate::surrogate::{DayInput, Record};
use crate::sync::{schedule_all, SyncOptions, ZoneModel, ZoneObservation};

/// Days simulated without irrigation before the season to build the
/// surrogate's input history.
pub const SPIN_UP_DAYS: usize = 5;

/// Hydrostatic profiles matching each zone's configured root-zone moisture
/// over `z_r`.
pub fn init_states(cfg: &SeasonConfig, z_r: f64) -> Result<Vec<SoilColumnState>> {
    cfg.zones
        .iter()
        .enumerate()
        .map(|(i, z)| {
            z.spec.richards_model()?.hydrostatic_state_for(z.initial_theta, z_r).map_err(|e| e.in_zone(i + 1))
        })
        .collect()
}

/// Truth simulators, zone by zone, each with its own noise stream.
struct Field {
    models: Vec<RichardsModel>,
    states: Vec<SoilColumnState>,
    rngs: Vec<ChaCha8Rng>,
    noise_std: f64,
    parallel: bool,
}

impl Field {
    fn advance(&mut self, forcings: &[DailyForcing]) -> Result<()> {
        let noise = self.noise_std;
        let step = |((m, s), (r, f)): ((&RichardsModel, &mut SoilColumnState), (&mut ChaCha8Rng, &DailyForcing))| {
            m.simulate_day(s, f, noise, r).map(|out| *s = out.state)
        };
        let results: Vec<Result<()>> = if self.parallel {
            self.models
                .par_iter()
                .zip(self.states.par_iter_mut())
                .zip(self.rngs.par_iter_mut().zip(forcings.par_iter()))
                .map(step)
                .collect()
        } else {
            self.models.iter().zip(self.states.iter_mut()).zip(self.rngs.iter_mut().zip(forcings)).map(step).collect()
        };
        results.into_iter().enumerate().try_for_each(|(i, r)| r.map_err(|e| e.in_zone(i + 1)))
    }

    fn root_zone(&self, z_r: f64) -> Result<Vec<f64>> {
        self.models.iter().zip(&self.states).map(|(m, s)| m.root_zone_moisture(s, z_r)).collect()
    }
}

fn day_cost(theta_end: f64, u: f64, p: &MpcParams) -> SeasonCosts {
    let (lo, hi) = p.slacks(theta_end);
    SeasonCosts {
        upper_violation: p.q_upper * hi * hi,
        lower_violation: p.q_lower * lo * lo,
        upper_violation_linear: p.q_upper * hi,
        lower_violation_linear: p.q_lower * lo,
        water: p.water_cost(u),
        fixed: 0.0,
    }
}

/// Runs the closed loop over `cfg.start..=cfg.end`. `models` is required for
/// the proposed method; their environments are re-parameterized with the
/// season's MAD and cost weights.
pub fn run_season(
    cfg: &SeasonConfig,
    weather: &[WeatherRecord],
    method: Method,
    models: Option<&[ZoneModel]>,
) -> Result<SeasonReport> {
    cfg.validate()?;
    let first = weather.first().ok_or_else(|| Error::Config("empty weather series".into()))?;
    let start_idx = (cfg.start - first.date).num_days();
    let end_idx = (cfg.end - first.date).num_days();
    if start_idx < 0 || end_idx >= weather.len() as i64 {
        return Err(Error::Config(format!(
            "weather covers {} to {}, season needs {} to {}",
            first.date,
            weather.last().map_or(first.date, |r| r.date),
            cfg.start,
            cfg.end
        )));
    }
    let (start_idx, end_idx) = (start_idx as usize, end_idx as usize);
    let nz = cfg.zones.len();
    let params: Vec<MpcParams> = cfg.zones.iter().map(|z| cfg.mpc_params(&z.spec)).collect::<Result<_>>()?;

    let zone_models: Vec<ZoneModel> = match method {
        Method::Triggered => Vec::new(),
        Method::Proposed => {
            let m = models.ok_or_else(|| Error::Config("the proposed method needs trained zone models".into()))?;
            if m.len() != nz {
                return Err(Error::Config(format!("{} zone models for {nz} zones", m.len())));
            }
            m.iter()
                .zip(&cfg.zones)
                .zip(&params)
                .map(|((zm, zc), p)| {
                    let mut zm = zm.clone();
                    zm.env.model = zc.spec.richards_model()?;
                    zm.env.params = p.clone();
                    Ok(zm)
                })
                .collect::<Result<_>>()?
        }
    };
    let lag = zone_models.first().map_or(0, |z| z.surrogate.lag);

    // Cumulative degree days from the first weather record.
    let mut cum = 0.0;
    let kc: Vec<f64> = weather
        .iter()
        .map(|r| {
            cum += gdd(r.tavg_c, cfg.crop.t_base);
            cfg.crop.kc(cum)
        })
        .collect();
    let depth = |i: usize| cfg.root_depth.depth(weather[i].date);
    let forcing = |i: usize, u: f64| DailyForcing {
        irrigation: u,
        rain: weather[i].rain_mm,
        et0: weather[i].et0_mm,
        kc: kc[i],
        z_r: depth(i),
        ev: 0.0,
    };

    let spin = SPIN_UP_DAYS.min(start_idx);
    let mut field = Field {
        models: cfg.zones.iter().map(|z| z.spec.richards_model()).collect::<Result<_>>()?,
        states: init_states(cfg, depth(start_idx - spin))?,
        rngs: (0..nz)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
                r.set_stream(i as u64 + 1);
                r
            })
            .collect(),
        noise_std: cfg.process_noise_std,
        parallel: cfg.parallel,
    };
    let mut history: Vec<Vec<Record>> = vec![Vec::new(); nz];
    for i in start_idx - spin..start_idx {
        let y0 = field.root_zone(depth(i))?;
        let f = forcing(i, 0.0);
        for (h, y) in history.iter_mut().zip(&y0) {
            h.push(DayInput { water: f.rain, kc: f.kc, et0: f.et0, z_r: f.z_r }.record(*y));
        }
        field.advance(&vec![f; nz])?;
    }
    // Keep the last `lag` records; short spin-ups repeat the oldest one.
    let y_start = field.root_zone(depth(start_idx))?;
    for (z, h) in history.iter_mut().enumerate() {
        let pad = h.first().copied().unwrap_or_else(|| {
            let f = forcing(start_idx, 0.0);
            DayInput { water: 0.0, kc: f.kc, et0: f.et0, z_r: f.z_r }.record(y_start[z])
        });
        while h.len() < lag {
            h.insert(0, pad);
        }
        let excess = h.len() - lag;
        h.drain(..excess);
    }
    let mut forecast_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0F0E_CA57);

    let sync_opts = SyncOptions { horizon: cfg.horizon, parallel: cfg.parallel, solver: cfg.solver };
    let mut audit = MpcAudit::default();
    let mut traces = Vec::with_capacity(nz * cfg.days());
    let mut zone_costs = vec![SeasonCosts::default(); nz];
    let mut zone_water = vec![0.0; nz];
    let mut zone_days = vec![0usize; nz];
    let mut theta_end_series = vec![Vec::new(); nz];
    let mut demand = Vec::new();
    let mut rotations = 0;
    let mut fixed = 0.0;

    for (day, i) in (start_idx..=end_idx).enumerate() {
        let z_r = depth(i);
        let y0 = field.root_zone(z_r)?;
        let (rates, decisions): (Vec<f64>, Vec<u8>) = match method {
            Method::Triggered => (0..nz)
                .map(|z| {
                    let cfg_t = TriggerConfig::new(params[z].tz);
                    let ahead: Vec<f64> =
                        weather[i + 1..].iter().take(cfg_t.lookahead_days).map(|r| r.rain_mm).collect();
                    let u = triggered_rate(y0[z], z_r, &ahead, &cfg_t);
                    (u, u8::from(u > 0.0))
                })
                .unzip(),
            Method::Proposed => {
                let n = cfg.horizon.min(weather.len() - i);
                let (rain, et0) = perturb_forecast(&weather[i..i + n], &cfg.forecast, &mut forecast_rng);
                let forecast = Forecast { rain, et0, kc: kc[i..i + n].to_vec(), z_r: (i..i + n).map(depth).collect() };
                let observations: Vec<ZoneObservation> = (0..nz)
                    .map(|z| ZoneObservation { state: field.states[z].clone(), history: history[z].clone(), y0: y0[z] })
                    .collect();
                let opts = SyncOptions { horizon: n, ..sync_opts };
                let schedule = schedule_all(&zone_models, &observations, &forecast, &opts)
                    .map_err(|e| Error::Season { day, zone: 0, source: Box::new(e) })?;
                for (z, plan) in schedule.plans.iter().enumerate() {
                    let mut p = zone_models[z].env.params.clone();
                    p.horizon = n;
                    let ctx = ZoneContext { model: &zone_models[z].surrogate, history: &history[z], y0: y0[z] };
                    let guess = plan_cost(
                        ctx,
                        &schedule.binding.binding_c,
                        &forecast,
                        &p,
                        &schedule.binding.repaired_guesses[z],
                    )?;
                    audit.solves += 1;
                    if plan.cost.total() > guess.total() + 1e-9 * guess.total().abs().max(1.0) {
                        audit.improvement_failures += 1;
                    }
                    if !plan.is_feasible(&p) {
                        audit.coupling_failures += 1;
                    }
                    audit.max_kkt_residual = audit.max_kkt_residual.max(plan.kkt_residual);
                }
                if schedule.plans.iter().any(|p| p.decisions != schedule.binding.binding_c) {
                    audit.mismatched_days += 1;
                }
                let c = schedule.binding.binding_c[0];
                (schedule.plans.iter().map(|p| p.rates[0]).collect(), vec![c; nz])
            }
        };

        let forcings: Vec<DailyForcing> = rates.iter().map(|&u| forcing(i, u)).collect();
        field.advance(&forcings)?;
        let y_end = field.root_zone(z_r)?;
        let f = &forcings[0];
        demand.push(f.kc * f.et0);
        if rates.iter().any(|&u| u > 0.0) {
            rotations += 1;
            fixed += cfg.costs.r_c;
        }
        for z in 0..nz {
            zone_costs[z].add(&day_cost(y_end[z], rates[z], &params[z]));
            zone_water[z] += rates[z];
            zone_days[z] += usize::from(rates[z] > 0.0);
            theta_end_series[z].push(y_end[z]);
            traces.push(TraceRow {
                date: weather[i].date,
                zone: z + 1,
                theta_rz: y0[z],
                theta_rz_end: y_end[z],
                lower: params[z].tz.lower,
                upper: params[z].tz.upper,
                c: decisions[z],
                u: rates[z],
                rain: f.rain,
                et0: f.et0,
                kc: f.kc,
                z_r,
            });
            if lag > 0 {
                history[z].remove(0);
                history[z].push(DayInput { water: rates[z] + f.rain, kc: f.kc, et0: f.et0, z_r }.record(y0[z]));
            }
        }
    }

    let mut zones = Vec::with_capacity(nz);
    let mut costs = SeasonCosts { fixed, ..SeasonCosts::default() };
    for z in 0..nz {
        let spec = &cfg.zones[z].spec;
        let theta_v1 = spec.params.moisture(ANAEROBIC_HEAD);
        // Without evaporative demand water cannot limit yield.
        let y = if demand.iter().sum::<f64>() > 0.0 {
            seasonal_yield(&theta_end_series[z], &demand, &cfg.crop, &params[z].tz, theta_v1)
                .map_err(|e| e.in_zone(z + 1))?
        } else {
            YieldOutcome { actual: cfg.crop.y_max, et_c: 0.0, et_m: 0.0 }
        };
        costs.add(&zone_costs[z]);
        zones.push(ZoneSummary {
            name: spec.name.clone(),
            irrigation_mm: zone_water[z],
            irrigation_days: zone_days[z],
            costs: zone_costs[z],
            yield_mg_ha: y.actual,
            et_c_mm: y.et_c,
            et_m_mm: y.et_m,
        });
    }
    Ok(SeasonReport {
        method,
        mad: cfg.mad,
        days: end_idx - start_idx + 1,
        prescribed_irrigation_mm: zone_water.iter().sum(),
        pivot_rotations: rotations,
        overall_cost: costs.overall(),
        costs,
        predicted_yield_mg_ha: zones.iter().map(|z| z.yield_mg_ha).sum::<f64>() / nz as f64,
        zones,
        audit,
        traces,
    })
}
