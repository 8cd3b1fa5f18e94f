use approx::assert_relative_eq;
use irrsched_core::agronomy::target_bounds;
use irrsched_core::field::study_zones;
use irrsched_core::optim::Adam;
use irrsched_core::rl_agent::{
    collect_episode, evaluate_sequence, gae, loss_and_gradient, policy_act, ppo_update, reward, train_agent, Agent,
    ObsScaler, Observation, PolicyParams, PpoHyper, RolloutBatch, Transition, ZoneEnv,
};
use irrsched_core::scheduler_mpc::{Forecast, MpcParams, WaterUnit};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INPUT: usize = 6;

fn small_params(seed: u64, hidden: usize) -> PolicyParams {
    let mut p = PolicyParams::init(INPUT, hidden, &mut ChaCha8Rng::seed_from_u64(seed));
    // Push the heads away from the near-zero initialization so every term matters.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    p.w_out.iter_mut().for_each(|w| *w = rng.gen_range(-0.5..0.5));
    p.b_out.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
    p
}

fn random_transition(rng: &mut ChaCha8Rng, params: &PolicyParams) -> Transition {
    let x: Vec<f64> = (0..INPUT).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let c = u8::from(rng.gen_bool(0.6));
    let z = rng.gen_range(-1.5..1.5);
    let net = params.forward(&x);
    // Behaviour log-probabilities near the current ones keep ratios inside the band.
    let log_prob = net.action_log_prob(c, z) + rng.gen_range(-0.1..0.1);
    Transition {
        x,
        c,
        z,
        log_prob,
        value: net.value(),
        reward: rng.gen_range(-1.0..0.0),
        advantage: rng.gen_range(-2.0..2.0),
        value_target: rng.gen_range(-1.0..1.0),
    }
}

fn zone_params() -> MpcParams {
    let tz = target_bounds(0.30, 0.12, 0.5).unwrap();
    let mut p = MpcParams::new(tz, 4.0, 52.0);
    p.tz.lower = 0.216;
    p
}

#[test]
fn reward_piecewise_values() {
    let mut p = zone_params();
    assert_eq!(reward(0.25, 0, 0.0, &p), 0.0);
    assert_eq!(reward(p.tz.lower, 0, 0.0, &p), 0.0);
    assert_eq!(reward(p.tz.upper, 0, 0.0, &p), 0.0);
    assert_relative_eq!(reward(0.19, 0, 0.0, &p), -520_000.0, max_relative = 1e-12);
    assert_relative_eq!(reward(0.31, 0, 0.0, &p), -2.2e7 * 0.01, max_relative = 1e-9);
    p.water_unit = WaterUnit::Millimetre;
    assert_relative_eq!(reward(0.25, 1, 10.0, &p), -91_000.0, max_relative = 1e-12);
}

fn brute_gae(r: &[f64], v: &[f64], boot: f64, g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    let next = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
    (0..n).map(|t| (t..n).map(|k| (g * l).powi((k - t) as i32) * (r[k] + g * next(k) - v[k])).sum()).collect()
}

#[test]
fn gae_hand_cases() {
    let (a, ret) = gae(&[1.0], &[0.0], 0.0, 0.99, 0.97);
    assert_eq!(a, vec![1.0]);
    assert_eq!(ret, vec![1.0]);
    let (a, _) = gae(&[0.0; 5], &[0.0; 5], 0.0, 0.99, 0.97);
    assert!(a.iter().all(|v| *v == 0.0));
    let r = [0.3, -1.0, 2.0];
    let v = [0.5, 0.1, -0.4];
    let (a, _) = gae(&r, &v, 0.7, 0.9, 0.0);
    let deltas = [0.3 + 0.9 * 0.1 - 0.5, -1.0 + 0.9 * -0.4 - 0.1, 2.0 + 0.9 * 0.7 + 0.4];
    for (x, d) in a.iter().zip(deltas) {
        assert_relative_eq!(*x, d, max_relative = 1e-15);
    }
}

proptest! {
    #[test]
    fn gae_matches_the_double_sum(
        data in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60),
        boot in -5.0f64..5.0,
        gamma in 0.0f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = data.into_iter().unzip();
        let (a, ret) = gae(&r, &v, boot, gamma, lambda);
        let b = brute_gae(&r, &v, boot, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((a[t] - b[t]).abs() <= 1e-10, "t {}: {} vs {}", t, a[t], b[t]);
            prop_assert!((ret[t] - (a[t] + v[t])).abs() <= 1e-12);
        }
    }

    #[test]
    fn zone_reward_is_zero_inside_and_negative_outside(theta in 0.05f64..0.45) {
        let p = zone_params();
        let r = reward(theta, 0, 0.0, &p);
        if p.tz.contains(theta) {
            prop_assert_eq!(r, 0.0);
        } else {
            prop_assert!(r < 0.0);
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let hyper = PpoHyper { hidden: 5, ..PpoHyper::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for probe in 0..100u64 {
        let params = small_params(probe, 5);
        let batch: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng, &params)).collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let (_, grads, _) = loss_and_gradient(&params, &refs, &hyper);
        let tensor = rng.gen_range(0..params.tensors().len());
        let index = rng.gen_range(0..params.tensors()[tensor].len());
        let analytic = grads.tensors()[tensor][index];
        let h = 1e-6;
        let shifted = |d: f64| {
            let mut q = params.clone();
            q.tensors_mut()[tensor][index] += d;
            loss_and_gradient(&q, &refs, &hyper).0
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let scale = analytic.abs().max(fd.abs());
        if scale < 1e-7 {
            continue;
        }
        checked += 1;
        worst = worst.max((analytic - fd).abs() / scale);
    }
    assert!(checked > 50);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn clipped_ratio_caps_the_objective() {
    let params = small_params(3, 4);
    let hyper = PpoHyper { entropy_coef: 0.0, value_coef: 0.0, ..PpoHyper::default() };
    let x = vec![0.2, -0.4, 0.9, 0.0, 1.1, -0.3];
    let net = params.forward(&x);
    let z = 0.4;
    let t = Transition {
        log_prob: net.action_log_prob(1, z) - 1.5f64.ln(),
        x,
        c: 1,
        z,
        value: 0.0,
        reward: 0.0,
        advantage: 2.0,
        value_target: 0.0,
    };
    let (loss, grads, clipped) = loss_and_gradient(&params, &[&t], &hyper);
    assert_relative_eq!(loss, -1.25 * 2.0, max_relative = 1e-12);
    assert_eq!(clipped, 1);
    assert!(grads.tensors().iter().all(|g| g.iter().all(|v| *v == 0.0)));
}

#[test]
fn zero_advantages_leave_parameters_unchanged() {
    let params = small_params(5, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let transitions: Vec<Transition> = (0..50)
        .map(|_| {
            let mut t = random_transition(&mut rng, &params);
            t.advantage = 0.0;
            t.value_target = params.forward(&t.x).value();
            t
        })
        .collect();
    let hyper = PpoHyper { entropy_coef: 0.0, minibatch: 16, epochs: 3, ..PpoHyper::default() };
    let mut updated = params.clone();
    let mut adam = Adam::new(hyper.learning_rate);
    ppo_update(&mut updated, &mut adam, &RolloutBatch { transitions }, &hyper, &mut rng).unwrap();
    assert_eq!(updated, params);
}

fn observation(theta: f64) -> Observation {
    Observation { theta_profile: vec![theta; 31], et0: 5.0, kc: 0.9, z_r: 0.5 }
}

fn test_agent() -> Agent {
    let mut params = PolicyParams::init(34, 8, &mut ChaCha8Rng::seed_from_u64(4));
    params.b_out.iter_mut().zip([0.0, 0.1, 0.3, -0.5, 0.0]).for_each(|(b, v)| *b = v);
    Agent::new(params, ObsScaler::identity(34), 4.0, 52.0)
}

#[test]
fn sampled_rates_respect_the_gate_and_bounds() {
    let agent = test_agent();
    let obs = observation(0.2);
    let mut fired = 0;
    for seed in 0..500 {
        let a = policy_act(&agent, &obs, Some(seed));
        if a.c == 1 {
            fired += 1;
            assert!(a.u >= 4.0 && a.u <= 52.0);
        } else {
            assert_eq!(a.u, 0.0);
        }
    }
    assert!(fired > 0 && fired < 500);
    assert_eq!(policy_act(&agent, &obs, None), policy_act(&agent, &obs, None));
}

#[test]
fn vanishing_spread_collapses_to_the_mean() {
    let mut agent = test_agent();
    // Silence the log-std row and pin it at its lower clamp.
    let h = agent.params.hidden;
    agent.params.w_out[3 * h..4 * h].fill(0.0);
    agent.params.b_out[3] = -50.0;
    agent.params.b_out[1] = 20.0;
    let obs = observation(0.2);
    let mean = agent.squash(agent.evaluate(&obs).1.mean());
    for seed in 0..20 {
        let a = policy_act(&agent, &obs, Some(seed));
        assert_eq!(a.c, 1);
        assert!((a.u - mean).abs() < 0.5, "{} vs {mean}", a.u);
    }
}

fn tiny_hyper(episodes: usize) -> PpoHyper {
    PpoHyper {
        horizon: 8,
        episodes,
        episodes_per_update: 5,
        hidden: 8,
        minibatch: 16,
        epochs: 2,
        ..PpoHyper::default()
    }
}

#[test]
fn training_is_reproducible() {
    let env = ZoneEnv::for_zone(&study_zones()[0], 0.65, 0.01).unwrap();
    let (a1, c1) = train_agent(&env, &tiny_hyper(15), 8).unwrap();
    let (a2, c2) = train_agent(&env, &tiny_hyper(15), 8).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(a1, a2);
    assert_eq!(c1.episode_rewards.len(), 15);
}

#[test]
fn heavy_entropy_keeps_the_policy_near_uniform() {
    let env = ZoneEnv::for_zone(&study_zones()[0], 0.65, 0.01).unwrap();
    let hyper = PpoHyper { entropy_coef: 50.0, learning_rate: 1e-3, ..tiny_hyper(60) };
    let (trained, _) = train_agent(&env, &hyper, 2).unwrap();
    let (baseline, _) = train_agent(&env, &PpoHyper { episodes: 0, ..hyper.clone() }, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let (state, drivers) = env.reset(1, &mut rng).unwrap();
        let p = trained.evaluate(&env.observe(&state, &drivers[0])).1.probs();
        assert!((p[1] - 0.5).abs() < 0.1, "p(irrigate) = {}", p[1]);
    }
    let mean_reward = |agent: &Agent| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        (0..40).map(|_| collect_episode(agent, &env, &hyper, &mut rng).unwrap().1).sum::<f64>() / 40.0
    };
    let (t, b) = (mean_reward(&trained), mean_reward(&baseline));
    assert!((t - b).abs() <= 0.25 * b.abs(), "trained {t:.4e}, random {b:.4e}");
}

#[test]
fn sequence_lengths_and_gating() {
    let zone = &study_zones()[0];
    let env = ZoneEnv::for_zone(zone, 0.65, 0.0).unwrap();
    let agent = Agent::new(
        PolicyParams::init(34, 8, &mut ChaCha8Rng::seed_from_u64(1)),
        ObsScaler::identity(34),
        zone.u_min,
        zone.u_max,
    );
    let state = env.model.hydrostatic_state_for(0.2, 0.5).unwrap();
    let n = 6;
    let forecast = Forecast { rain: vec![1.0; n], et0: vec![5.0; n], kc: vec![0.9; n], z_r: vec![0.5; n] };
    let (c, u) = evaluate_sequence(&agent, &env, &state, &forecast, n).unwrap();
    assert_eq!((c.len(), u.len()), (n, n));
    for k in 0..n {
        assert!(c[k] <= 1);
        if c[k] == 0 {
            assert_eq!(u[k], 0.0);
        }
    }
    let (c1, u1) = evaluate_sequence(&agent, &env, &state, &forecast, 1).unwrap();
    let first = agent.act_deterministic(&env.observe(
        &state,
        &irrsched_core::agrohydro::DailyForcing { irrigation: 0.0, rain: 1.0, et0: 5.0, kc: 0.9, z_r: 0.5, ev: 0.0 },
    ));
    assert_eq!((c1[0], u1[0]), (first.c, first.u));
}
