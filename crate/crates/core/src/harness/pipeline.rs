//! Offline training of every zone's surrogate and agent.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::ZoneSpec;
use crate::rl_agent::{train_agent, Agent, PpoHyper, RewardCurve, ZoneEnv};
use crate::surrogate::{
    episode_windows, evaluate_rollouts, generate_episodes, train, ForcingRanges, GenerationSettings, RolloutScore,
    SurrogateModel, TrainHyper, TrainReport,
};
use crate::sync::ZoneModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    /// Open-loop simulator episodes for the surrogate.
    pub episodes: usize,
    pub episode_days: usize,
    /// Process noise on ψ (m) in data generation and agent training.
    pub noise_std: f64,
    pub surrogate: TrainHyper,
    pub ppo: PpoHyper,
    /// Held-out episodes for the rollout check.
    pub evaluation_episodes: usize,
    pub rollout_horizon: usize,
    pub seed: u64,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            episodes: 200,
            episode_days: 60,
            noise_std: 0.01,
            surrogate: TrainHyper::default(),
            ppo: PpoHyper::default(),
            evaluation_episodes: 40,
            rollout_horizon: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOutcome {
    pub model: SurrogateModel,
    pub report: TrainReport,
    /// Recursive rollouts on fresh episodes.
    pub rollout: RolloutScore,
}

fn generation(zone: &ZoneSpec, plan: &TrainingPlan, episodes: usize, seed: u64) -> GenerationSettings {
    GenerationSettings {
        episodes,
        days: plan.episode_days,
        lag: plan.surrogate.lag,
        noise_std: plan.noise_std,
        initial_moisture: (zone.theta_pwp, zone.theta_fc + 0.03),
        seed,
    }
}

/// Generates data, trains and scores the surrogate of one zone.
pub fn train_zone_surrogate(zone: &ZoneSpec, plan: &TrainingPlan) -> Result<SurrogateOutcome> {
    let model = zone.richards_model()?;
    let ranges = ForcingRanges::for_irrigation(zone.u_min, zone.u_max);
    let episodes = generate_episodes(&model, &ranges, &generation(zone, plan, plan.episodes, plan.seed));
    let windows = episode_windows(&episodes, plan.surrogate.lag);
    let hyper = TrainHyper { seed: plan.seed, ..plan.surrogate.clone() };
    let (surrogate, report) = train(&windows, &hyper)?;
    let fresh = generate_episodes(
        &model,
        &ranges,
        &generation(zone, plan, plan.evaluation_episodes, plan.seed.wrapping_add(0xE7A1)),
    );
    let rollout = evaluate_rollouts(&surrogate, &fresh, plan.rollout_horizon)?;
    Ok(SurrogateOutcome { model: surrogate, report, rollout })
}

pub fn train_zone_agent(zone: &ZoneSpec, mad: f64, plan: &TrainingPlan) -> Result<(Agent, RewardCurve)> {
    let env = ZoneEnv::for_zone(zone, mad, plan.noise_std)?;
    train_agent(&env, &plan.ppo, plan.seed)
}

pub fn assemble_zone_model(
    zone: &ZoneSpec,
    mad: f64,
    agent: Agent,
    surrogate: SurrogateModel,
    noise_std: f64,
) -> Result<ZoneModel> {
    Ok(ZoneModel { name: zone.name.clone(), agent, env: ZoneEnv::for_zone(zone, mad, noise_std)?, surrogate })
}
