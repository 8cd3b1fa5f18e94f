//! PPO irrigation agent for one management zone.
//!
//! The policy picks a daily on/off decision from a categorical head and,
//! when on, a rate from a tanh-squashed Gaussian mapped onto the zone's
//! rate bounds. The environment is the zone's Richards model.

mod env;
mod net;
mod ppo;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agrohydro::{DailyForcing, SoilColumnState};
use crate::error::{Error, Result};
use crate::scheduler_mpc::{Forecast, MpcParams};

pub use env::ZoneEnv;
pub use net::{NetOutput, PolicyParams, LOG_STD_MAX, LOG_STD_MIN, OUTPUTS};
pub use ppo::{
    collect_episode, loss_and_gradient, ppo_update, reward_curve, train_agent, write_reward_curve_csv, RewardCurve,
    RolloutBatch, Transition, UpdateStats,
};

pub const AGENT_FORMAT_VERSION: u32 = 1;

/// What the agent sees on the morning of a day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Moisture at every grid node (m³/m³).
    pub theta_profile: Vec<f64>,
    /// Reference evapotranspiration for the day (mm).
    pub et0: f64,
    pub kc: f64,
    /// Rooting depth (m).
    pub z_r: f64,
}

impl Observation {
    pub fn features(&self) -> Vec<f64> {
        let mut f = self.theta_profile.clone();
        f.extend([self.et0, self.kc, self.z_r]);
        f
    }

    pub fn is_finite(&self) -> bool {
        self.features().iter().all(|v| v.is_finite())
    }
}

/// Per-feature standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ObsScaler {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    /// Spreads are floored at 1e-3 so near-constant deep nodes stay bounded.
    pub fn fit(samples: &[Vec<f64>]) -> Self {
        let n = samples.first().map_or(0, |s| s.len());
        let count = samples.len().max(1) as f64;
        let mut mean = vec![0.0; n];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / count;
            }
        }
        let mut std = vec![0.0; n];
        for s in samples {
            for ((sd, v), m) in std.iter_mut().zip(s).zip(&mean) {
                *sd += (v - m) * (v - m) / count;
            }
        }
        std.iter_mut().for_each(|v| *v = v.sqrt().max(1e-3));
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoHyper {
    /// Episode length (days).
    pub horizon: usize,
    pub learning_rate: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub episodes: usize,
    /// Episodes collected between updates.
    pub episodes_per_update: usize,
    /// Rewards are multiplied by this before learning.
    pub reward_scale: f64,
    pub hidden: usize,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            horizon: 30,
            learning_rate: 1e-4,
            minibatch: 64,
            epochs: 10,
            gamma: 0.99,
            gae_lambda: 0.97,
            clip: 0.25,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            episodes: 5000,
            episodes_per_update: 20,
            reward_scale: 1e-6,
            hidden: 64,
        }
    }
}

impl PpoHyper {
    pub fn full_scale() -> Self {
        Self { episodes: 300_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 1
            && self.learning_rate > 0.0
            && self.minibatch >= 1
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && (0.0..=1.0).contains(&self.gae_lambda)
            && self.clip > 0.0
            && self.entropy_coef >= 0.0
            && self.value_coef >= 0.0
            && self.max_grad_norm > 0.0
            && self.episodes_per_update >= 1
            && self.reward_scale > 0.0
            && self.hidden >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid PPO hyperparameters {self:?}")))
        }
    }
}

/// Negative cost of one day with the linear zone penalty on the
/// end-of-day root-zone moisture.
pub fn reward(theta_rz: f64, c: u8, u: f64, p: &MpcParams) -> f64 {
    let (lo, hi) = p.slacks(theta_rz);
    -(p.q_upper * hi + p.q_lower * lo) - p.r_c * c as f64 - p.water_cost(u)
}

/// Generalized advantage estimates and value targets.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "rewards and values differ in length");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// One action with its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub c: u8,
    /// Rate (mm/day); zero when `c = 0`.
    pub u: f64,
    /// Pre-squash Gaussian sample.
    pub z: f64,
    /// Joint log-probability of `(c, u)`, including the squashing Jacobian.
    pub log_prob: f64,
    pub value: f64,
}

/// A trained policy with its observation scaler and rate bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub version: u32,
    pub params: PolicyParams,
    pub scaler: ObsScaler,
    pub u_min: f64,
    pub u_max: f64,
}

impl Agent {
    pub fn new(params: PolicyParams, scaler: ObsScaler, u_min: f64, u_max: f64) -> Self {
        Self { version: AGENT_FORMAT_VERSION, params, scaler, u_min, u_max }
    }

    pub fn squash(&self, z: f64) -> f64 {
        (self.u_min + 0.5 * (self.u_max - self.u_min) * (z.tanh() + 1.0)).clamp(self.u_min, self.u_max)
    }

    /// log |du/dz|.
    fn squash_log_jacobian(&self, z: f64) -> f64 {
        let t = z.tanh();
        (0.5 * (self.u_max - self.u_min)).ln() + (1.0 - t * t).max(1e-300).ln()
    }

    pub fn evaluate(&self, obs: &Observation) -> (Vec<f64>, NetOutput) {
        let x = self.scaler.apply(&obs.features());
        let out = self.params.forward(&x);
        (x, out)
    }

    fn finish(&self, out: &NetOutput, c: u8, z: f64) -> Action {
        let u = if c == 1 { self.squash(z) } else { 0.0 };
        let mut log_prob = out.action_log_prob(c, z);
        if c == 1 {
            log_prob -= self.squash_log_jacobian(z);
        }
        Action { c, u, z, log_prob, value: out.value() }
    }

    pub fn act_sample<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Action {
        let (_, out) = self.evaluate(obs);
        let c = u8::from(rng.gen::<f64>() < out.probs()[1]);
        let eps: f64 = rng.sample(StandardNormal);
        let z = out.mean() + out.log_std().exp() * eps;
        self.finish(&out, c, z)
    }

    /// Most likely decision and the rate at the Gaussian mean.
    pub fn act_deterministic(&self, obs: &Observation) -> Action {
        let (_, out) = self.evaluate(obs);
        let p = out.probs();
        let c = u8::from(p[1] > p[0]);
        self.finish(&out, c, out.mean())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let agent: Agent = serde_json::from_str(&text)?;
        if agent.version != AGENT_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "agent checkpoint version {} (expected {AGENT_FORMAT_VERSION})",
                agent.version
            )));
        }
        Ok(agent)
    }
}

/// Deterministic action when `seed` is `None`, otherwise a seeded sample.
pub fn policy_act(agent: &Agent, obs: &Observation, seed: Option<u64>) -> Action {
    match seed {
        None => agent.act_deterministic(obs),
        Some(s) => agent.act_sample(obs, &mut ChaCha8Rng::seed_from_u64(s)),
    }
}

/// Deterministic `horizon`-day policy rollout against the noise-free zone
/// simulator driven by `forecast`, with the agent's own rates applied.
pub fn evaluate_sequence(
    agent: &Agent,
    env: &ZoneEnv,
    state: &SoilColumnState,
    forecast: &Forecast,
    horizon: usize,
) -> Result<(Vec<u8>, Vec<f64>)> {
    if horizon == 0 || forecast.len() < horizon {
        return Err(Error::InvalidParameter(format!("horizon {horizon} with a {}-day forecast", forecast.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut state = state.clone();
    let (mut cs, mut us) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon));
    for k in 0..horizon {
        let mut forcing = DailyForcing {
            irrigation: 0.0,
            rain: forecast.rain[k],
            et0: forecast.et0[k],
            kc: forecast.kc[k],
            z_r: forecast.z_r[k],
            ev: 0.0,
        };
        let a = agent.act_deterministic(&env.observe(&state, &forcing));
        cs.push(a.c);
        us.push(a.u);
        if k + 1 < horizon {
            forcing.irrigation = a.u;
            state = env.model.simulate_day(&state, &forcing, 0.0, &mut rng)?.state;
        }
    }
    Ok((cs, us))
}
