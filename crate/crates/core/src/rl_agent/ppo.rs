use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{OUTPUTS, OUT_LOGIT0, OUT_LOGIT1, OUT_LOG_STD, OUT_MEAN, OUT_VALUE};
use super::{gae, Agent, ObsScaler, PolicyParams, PpoHyper, ZoneEnv};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, Adam};

const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Scaled observation features.
    pub x: Vec<f64>,
    pub c: u8,
    /// Pre-squash rate sample.
    pub z: f64,
    /// Behaviour log-probability without the squashing Jacobian.
    pub log_prob: f64,
    pub value: f64,
    /// Scaled reward.
    pub reward: f64,
    pub advantage: f64,
    pub value_target: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Runs one sampled episode of `hyper.horizon` days. Returns the
/// transitions with advantages filled in and the unscaled episode reward.
pub fn collect_episode<R: Rng + ?Sized>(
    agent: &Agent,
    env: &ZoneEnv,
    hyper: &PpoHyper,
    rng: &mut R,
) -> Result<(Vec<Transition>, f64)> {
    // One extra day of drivers gives the bootstrap observation.
    let (mut state, drivers) = env.reset(hyper.horizon + 1, rng)?;
    let mut out = Vec::with_capacity(hyper.horizon);
    let mut total = 0.0;
    for forcing in drivers.iter().take(hyper.horizon) {
        let obs = env.observe(&state, forcing);
        let (x, net) = agent.evaluate(&obs);
        let action = agent.act_sample(&obs, rng);
        let step = env.step(&state, forcing, &action, rng)?;
        total += step.reward;
        out.push(Transition {
            log_prob: net.action_log_prob(action.c, action.z),
            x,
            c: action.c,
            z: action.z,
            value: net.value(),
            reward: step.reward * hyper.reward_scale,
            advantage: 0.0,
            value_target: 0.0,
        });
        state = step.state;
    }
    let last = env.observe(&state, &drivers[hyper.horizon]);
    let bootstrap = agent.evaluate(&last).1.value();
    let rewards: Vec<f64> = out.iter().map(|t| t.reward).collect();
    let values: Vec<f64> = out.iter().map(|t| t.value).collect();
    let (adv, ret) = gae(&rewards, &values, bootstrap, hyper.gamma, hyper.gae_lambda);
    for ((t, a), r) in out.iter_mut().zip(adv).zip(ret) {
        t.advantage = a;
        t.value_target = r;
    }
    Ok((out, total))
}

/// Mean clipped-surrogate loss over `batch` and its parameter gradient:
/// `-min(ρA, clip(ρ)A) + value_coef (V - R)² - entropy_coef H`.
/// Advantages are used as stored.
pub fn loss_and_gradient(params: &PolicyParams, batch: &[&Transition], hyper: &PpoHyper) -> (f64, PolicyParams, usize) {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut clipped = 0;
    let m = batch.len().max(1) as f64;
    for t in batch {
        let net = params.forward(&t.x);
        let p = net.probs();
        let lp = net.log_probs();
        let logp = net.action_log_prob(t.c, t.z);
        let ratio = (logp - t.log_prob).exp();
        let a = t.advantage;
        let unclipped = ratio * a;
        let clipped_term = ratio.clamp(1.0 - hyper.clip, 1.0 + hyper.clip) * a;
        let surr = unclipped.min(clipped_term);
        let d_logp = if unclipped <= clipped_term {
            -ratio * a
        } else {
            clipped += 1;
            0.0
        };

        let h_cat = -(p[0] * lp[0] + p[1] * lp[1]);
        let raw_ls = net.out[OUT_LOG_STD];
        let ls_free = (super::LOG_STD_MIN..=super::LOG_STD_MAX).contains(&raw_ls);
        let mut entropy = h_cat;
        if t.c == 1 {
            entropy += net.log_std() + HALF_LN_2PI_E;
        }
        let v_err = net.value() - t.value_target;
        loss += (-surr + hyper.value_coef * v_err * v_err - hyper.entropy_coef * entropy) / m;

        let mut d = [0.0; OUTPUTS];
        let c = t.c as usize;
        for (j, idx) in [OUT_LOGIT0, OUT_LOGIT1].into_iter().enumerate() {
            let onehot = if j == c { 1.0 } else { 0.0 };
            let d_entropy = -p[j] * (lp[j] + h_cat);
            d[idx] = d_logp * (onehot - p[j]) - hyper.entropy_coef * d_entropy;
        }
        if t.c == 1 {
            let sigma = net.log_std().exp();
            let s = (t.z - net.mean()) / sigma;
            d[OUT_MEAN] = d_logp * s / sigma;
            if ls_free {
                d[OUT_LOG_STD] = d_logp * (s * s - 1.0) - hyper.entropy_coef;
            }
        }
        d[OUT_VALUE] = 2.0 * hyper.value_coef * v_err;
        d.iter_mut().for_each(|v| *v /= m);
        params.backward(&t.x, &net, &d, &mut grads);
    }
    (loss, grads, clipped)
}

/// `hyper.epochs` passes of shuffled minibatch Adam steps on the clipped
/// objective. Advantages are standardized over the whole batch first.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    adam: &mut Adam,
    batch: &RolloutBatch,
    hyper: &PpoHyper,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = batch.transitions.len();
    if n == 0 {
        return Ok(UpdateStats::default());
    }
    let mean = batch.transitions.iter().map(|t| t.advantage).sum::<f64>() / n as f64;
    let var = batch.transitions.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    let normalized: Vec<Transition> = batch
        .transitions
        .iter()
        .map(|t| Transition { advantage: (t.advantage - mean) / (sd + 1e-8), ..t.clone() })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut clipped = 0usize;
    let mut seen = 0usize;
    for _ in 0..hyper.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hyper.minibatch) {
            let mb: Vec<&Transition> = chunk.iter().map(|&i| &normalized[i]).collect();
            let (loss, mut grads, c) = loss_and_gradient(params, &mb, hyper);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            clip_global_norm(grads.tensors_mut(), hyper.max_grad_norm);
            adam.update(params.tensors_mut(), grads.tensors());
            stats.loss += loss;
            stats.minibatches += 1;
            clipped += c;
            seen += chunk.len();
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    stats.loss /= stats.minibatches.max(1) as f64;
    stats.clip_fraction = clipped as f64 / seen.max(1) as f64;
    Ok(stats)
}

/// Unscaled episode rewards in training order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardCurve {
    pub episode_rewards: Vec<f64>,
}

impl RewardCurve {
    /// Mean of the first or last `fraction` of episodes.
    pub fn head_mean(&self, fraction: f64) -> f64 {
        let k = ((self.episode_rewards.len() as f64 * fraction).round() as usize).max(1);
        self.episode_rewards[..k].iter().sum::<f64>() / k as f64
    }

    pub fn tail_mean(&self, fraction: f64) -> f64 {
        let n = self.episode_rewards.len();
        let k = ((n as f64 * fraction).round() as usize).max(1);
        self.episode_rewards[n - k..].iter().sum::<f64>() / k as f64
    }
}

/// Means over consecutive windows of `window` episodes; a trailing partial
/// window is dropped.
pub fn reward_curve(rewards: &[f64], window: usize) -> Vec<f64> {
    rewards.chunks_exact(window.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

pub fn write_reward_curve_csv(path: &Path, curve: &RewardCurve, window: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode_window", "mean_reward"])?;
    for (i, m) in reward_curve(&curve.episode_rewards, window).iter().enumerate() {
        w.write_record([i.to_string(), m.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn collect_batch(
    agent: &Agent,
    env: &ZoneEnv,
    hyper: &PpoHyper,
    seed: u64,
    episodes: std::ops::Range<usize>,
) -> Result<(RolloutBatch, Vec<f64>)> {
    let results: Vec<Result<(Vec<Transition>, f64)>> =
        episodes.into_par_iter().map(|e| collect_episode(agent, env, hyper, &mut episode_rng(seed, e))).collect();
    let mut batch = RolloutBatch::default();
    let mut totals = Vec::new();
    for r in results {
        let (t, total) = r?;
        batch.transitions.extend(t);
        totals.push(total);
    }
    Ok((batch, totals))
}

/// Trains a fresh agent on `env`. Observation statistics come from one
/// batch of warm-up episodes under the initial policy, which are not
/// counted in the curve. Deterministic for a given seed.
pub fn train_agent(env: &ZoneEnv, hyper: &PpoHyper, seed: u64) -> Result<(Agent, RewardCurve)> {
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = env.model.grid.node_count() + 3;
    let params = PolicyParams::init(input, hyper.hidden, &mut rng);
    let mut agent = Agent::new(params, ObsScaler::identity(input), env.params.u_min, env.params.u_max);

    let warmup = hyper.episodes_per_update;
    let (batch, _) = collect_batch(&agent, env, hyper, seed ^ 0xA5A5, 0..warmup)?;
    let raw: Vec<Vec<f64>> = batch.transitions.iter().map(|t| t.x.clone()).collect();
    agent.scaler = ObsScaler::fit(&raw);

    let mut adam = Adam::new(hyper.learning_rate);
    let mut curve = RewardCurve::default();
    let mut start = 0;
    while start < hyper.episodes {
        let end = (start + hyper.episodes_per_update).min(hyper.episodes);
        let (batch, totals) = collect_batch(&agent, env, hyper, seed, start..end)?;
        let stats = ppo_update(&mut agent.params, &mut adam, &batch, hyper, &mut rng)?;
        log::debug!(
            "episodes {start}..{end}: mean reward {:.4e}, loss {:.4e}, clipped {:.3}",
            totals.iter().sum::<f64>() / totals.len() as f64,
            stats.loss,
            stats.clip_fraction
        );
        curve.episode_rewards.extend(totals);
        start = end;
    }
    Ok((agent, curve))
}
