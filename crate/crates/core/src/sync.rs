//! Field-wide synchronization: every zone's policy proposes a decision
//! sequence, the zone that fires first binds the whole field, and each zone
//! then sizes its own rates under that shared sequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agrohydro::SoilColumnState;
use crate::error::{Error, Result};
use crate::rl_agent::{evaluate_sequence, Agent, ZoneEnv};
use crate::scheduler_mpc::{solve_rates_with, Forecast, IrrigationPlan, SolverOptions, ZoneContext};
use crate::surrogate::{Record, SurrogateModel};

fn first_fire(c: &[u8]) -> usize {
    c.iter().position(|&v| v != 0).unwrap_or(usize::MAX)
}

fn check_sequences(sequences: &[Vec<u8>]) -> Result<()> {
    let first = sequences.first().ok_or_else(|| Error::InvalidParameter("no decision sequences".into()))?;
    if sequences.iter().any(|s| s.len() != first.len()) {
        return Err(Error::InvalidParameter("decision sequences differ in length".into()));
    }
    Ok(())
}

/// Index of the zone with the earliest irrigation day. Ties, including the
/// case where no zone irrigates, go to the lowest index.
pub fn find_limiting_zone(sequences: &[Vec<u8>]) -> Result<usize> {
    check_sequences(sequences)?;
    let mut best = 0;
    for (i, s) in sequences.iter().enumerate().skip(1) {
        if first_fire(s) < first_fire(&sequences[best]) {
            best = i;
        }
    }
    Ok(best)
}

pub fn binding_sequence(sequences: &[Vec<u8>]) -> Result<Vec<u8>> {
    Ok(sequences[find_limiting_zone(sequences)?].clone())
}

/// Nearest guess consistent with `binding`: zero on off days, the agent's
/// rate clipped into `[u_min, u_max]` on irrigation days.
pub fn repair_guess(u_agent: &[f64], binding: &[u8], u_min: f64, u_max: f64) -> Vec<f64> {
    binding.iter().zip(u_agent).map(|(&c, &u)| if c == 0 { 0.0 } else { u.clamp(u_min, u_max) }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingResult {
    pub limiting_zone: usize,
    pub binding_c: Vec<u8>,
    pub proposals: Vec<Vec<u8>>,
    pub repaired_guesses: Vec<Vec<f64>>,
}

/// Everything the scheduler holds for one zone. The environment carries the
/// zone's simulator and its cost weights at the season's MAD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneModel {
    pub name: String,
    pub agent: Agent,
    pub env: ZoneEnv,
    pub surrogate: SurrogateModel,
}

/// Today's estimate for one zone.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneObservation {
    pub state: SoilColumnState,
    /// The `lag` surrogate records before today.
    pub history: Vec<Record>,
    /// Root-zone moisture this morning.
    pub y0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub binding: BindingResult,
    pub plans: Vec<IrrigationPlan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncOptions {
    pub horizon: usize,
    pub parallel: bool,
    pub solver: SolverOptions,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self { horizon: 14, parallel: true, solver: SolverOptions::default() }
    }
}

fn map_zones<T, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> =
        if parallel { (0..n).into_par_iter().map(&f).collect() } else { (0..n).map(&f).collect() };
    results.into_iter().enumerate().map(|(i, r)| r.map_err(|e| e.in_zone(i + 1))).collect()
}

/// One pass of the synchronized scheduler. Zone tasks share no mutable
/// state and merge in zone order, so parallel and sequential runs agree bit
/// for bit.
pub fn schedule_all(
    zones: &[ZoneModel],
    observations: &[ZoneObservation],
    forecast: &Forecast,
    opts: &SyncOptions,
) -> Result<Schedule> {
    if zones.is_empty() || zones.len() != observations.len() {
        return Err(Error::InvalidParameter(format!("{} zones with {} observations", zones.len(), observations.len())));
    }
    let n = opts.horizon;
    let proposals = map_zones(zones.len(), opts.parallel, |i| {
        evaluate_sequence(&zones[i].agent, &zones[i].env, &observations[i].state, forecast, n)
    })?;
    let sequences: Vec<Vec<u8>> = proposals.iter().map(|(c, _)| c.clone()).collect();
    let limiting_zone = find_limiting_zone(&sequences)?;
    let binding_c = sequences[limiting_zone].clone();
    let repaired_guesses: Vec<Vec<f64>> = zones
        .iter()
        .zip(&proposals)
        .map(|(z, (_, u))| repair_guess(u, &binding_c, z.env.params.u_min, z.env.params.u_max))
        .collect();
    let plans = map_zones(zones.len(), opts.parallel, |i| {
        let ctx = ZoneContext { model: &zones[i].surrogate, history: &observations[i].history, y0: observations[i].y0 };
        let mut p = zones[i].env.params.clone();
        p.horizon = n;
        solve_rates_with(ctx, &binding_c, forecast, &p, &repaired_guesses[i], &opts.solver)
    })?;
    Ok(Schedule { binding: BindingResult { limiting_zone, binding_c, proposals: sequences, repaired_guesses }, plans })
}
