//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Training runs at desk scale, so a full run
//! takes tens of minutes on one core.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use irrsched_core::agrohydro::{vg_capacity, vg_moisture, BottomBoundary, DailyForcing, SoilColumnState};
use irrsched_core::field::{study_zones, ZoneSpec};
use irrsched_core::harness::{
    assemble_zone_model, load_weather, run_season, train_zone_agent, train_zone_surrogate, Method, SeasonConfig,
    SeasonReport, SurrogateOutcome, TrainingPlan,
};
use irrsched_core::rl_agent::{
    gae, loss_and_gradient, reward, reward_curve, Agent, PolicyParams, PpoHyper, RewardCurve, Transition,
};
use irrsched_core::scheduler_mpc::{plan_cost, solve_rates, Forecast, MpcParams, ZoneContext};
use irrsched_core::surrogate::{
    input_gradient, lstm_forward, LstmWeights, Record, Scaler, SurrogateModel, FEATURE_COUNT,
};
use irrsched_core::sync::{
    binding_sequence, find_limiting_zone, schedule_all, SyncOptions, ZoneModel, ZoneObservation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let out = f();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            self.failures += 1;
        }
        println!("[{tag}] {id:>2} {name}: {} ({:.1} s)", out.detail, start.elapsed().as_secs_f64());
    }
}

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn target_bounds_check() -> Outcome {
    let expected = [(0.40, [0.216, 0.216, 0.244]), (0.65, [0.176, 0.176, 0.209])];
    let mut worst: f64 = 0.0;
    for (mad, lows) in expected {
        for (z, want) in study_zones().iter().zip(lows) {
            worst = worst.max((z.target_zone(mad).unwrap().lower - want).abs());
        }
    }
    Outcome::new(worst <= 1e-12, format!("largest lower-bound error {worst:.1e}"))
}

fn conservation_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let zones = study_zones();
    let models: Vec<_> =
        zones.iter().map(|z| z.richards_model().unwrap().with_bottom(BottomBoundary::ZeroFlux)).collect();
    let still = DailyForcing { irrigation: 0.0, rain: 0.0, et0: 0.0, kc: 0.0, z_r: 0.5, ev: 0.0 };
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = &models[rng.gen_range(0..models.len())];
        let psi: Vec<f64> = (0..m.grid.node_count()).map(|_| -10f64.powf(rng.gen_range(-1.0..1.5))).collect();
        let s = SoilColumnState::new(psi);
        let dt = rng.gen_range(0.005..0.05);
        match m.step(&s, &still, dt) {
            Ok(out) => worst = worst.max((m.storage(&out.state) - m.storage(&s)).abs()),
            Err(e) => return Outcome::new(false, format!("step failed: {e}")),
        }
    }
    Outcome::new(worst <= 1e-6, format!("largest storage change {worst:.2e} m over 1000 steps"))
}

fn capacity_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let zones = study_zones();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p = &zones[rng.gen_range(0..zones.len())].params;
        let psi = -10f64.powf(rng.gen_range(-3.0..3.0));
        let h = 1e-5 * psi.abs();
        let fd = (vg_moisture(psi + h, p) - vg_moisture(psi - h, p)) / (2.0 * h);
        let c = vg_capacity(psi, p);
        worst = worst.max((c - fd).abs() / c.abs().max(fd.abs()).max(1e-300));
    }
    worst
}

fn lstm_gradient_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scaler = Scaler { mean: [0.22, 8.0, 0.7, 4.5, 0.75], std: [0.05, 12.0, 0.2, 2.5, 0.25] };
    let mut worst: f64 = 0.0;
    for probe in 0..100 {
        let weights = LstmWeights::init(FEATURE_COUNT, 8, 2, &mut ChaCha8Rng::seed_from_u64(probe));
        let model = SurrogateModel::new(5, scaler.clone(), weights);
        let window: Vec<Record> = (0..6)
            .map(|_| {
                [
                    rng.gen_range(0.1..0.35),
                    rng.gen_range(0.0..40.0),
                    rng.gen_range(0.4..1.02),
                    rng.gen_range(0.1..9.0),
                    if rng.gen_bool(0.5) { 0.5 } else { 1.0 },
                ]
            })
            .collect();
        let g = input_gradient(&model, &window);
        let t = rng.gen_range(0..window.len());
        let j = rng.gen_range(0..FEATURE_COUNT);
        let h = 1e-5 * scaler.std[j];
        let (mut plus, mut minus) = (window.clone(), window.clone());
        plus[t][j] += h;
        minus[t][j] -= h;
        let fd = (lstm_forward(&model, &plus) - lstm_forward(&model, &minus)) / (2.0 * h);
        worst = worst.max((g[t][j] - fd).abs() / g[t][j].abs().max(fd.abs()).max(1e-8));
    }
    worst
}

fn policy_gradient_worst() -> f64 {
    const INPUT: usize = 34;
    let hyper = PpoHyper { hidden: 16, ..PpoHyper::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut probe = 0u64;
    let mut checked = 0;
    while checked < 100 {
        probe += 1;
        let mut params = PolicyParams::init(INPUT, hyper.hidden, &mut ChaCha8Rng::seed_from_u64(probe));
        params.w_out.iter_mut().for_each(|w| *w = rng.gen_range(-0.5..0.5));
        params.b_out.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        let batch: Vec<Transition> = (0..4)
            .map(|_| {
                let x: Vec<f64> = (0..INPUT).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let c = u8::from(rng.gen_bool(0.6));
                let z = rng.gen_range(-1.5..1.5);
                let net = params.forward(&x);
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
            })
            .collect();
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
        // Parameters the batch does not reach carry no signal to compare.
        if scale < 1e-7 {
            continue;
        }
        checked += 1;
        worst = worst.max((analytic - fd).abs() / scale);
    }
    worst
}

fn gradient_check() -> Outcome {
    let cap = capacity_worst();
    let lstm = lstm_gradient_worst();
    let policy = policy_gradient_worst();
    Outcome::new(
        cap <= 1e-6 && lstm <= 1e-4 && policy <= 1e-4,
        format!("capacity {cap:.1e} (10^4 probes), LSTM input {lstm:.1e}, policy loss {policy:.1e} (100 probes each)"),
    )
}

fn surrogate_check(outcomes: &[(String, SurrogateOutcome)], plan: &TrainingPlan) -> Outcome {
    let pass = outcomes.iter().all(|(_, o)| o.rollout.rmse <= 0.01 && o.rollout.r2 >= 0.9);
    let detail: Vec<String> =
        outcomes.iter().map(|(name, o)| format!("{name} RMSE {:.4} R² {:.3}", o.rollout.rmse, o.rollout.r2)).collect();
    Outcome::new(
        pass,
        format!(
            "{}-day rollouts, {} episodes, {} units: {}",
            plan.rollout_horizon,
            plan.episodes,
            plan.surrogate.units,
            detail.join(", ")
        ),
    )
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Worst ratio of solver cost to the 200-point grid optimum on 20 random
/// two-day problems.
fn mpc_grid_ratio(zones: &[ZoneSpec], surrogates: &[SurrogateModel], cfg: &SeasonConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let i = rng.gen_range(0..zones.len());
        let model = &surrogates[i];
        let p: MpcParams = cfg.mpc_params(&zones[i]).unwrap();
        let y0 = rng.gen_range(p.tz.lower - 0.05..p.tz.upper + 0.02);
        let z_r = if rng.gen_bool(0.5) { 0.5 } else { 1.0 };
        let f = Forecast {
            rain: (0..2).map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..15.0) } else { 0.0 }).collect(),
            et0: (0..2).map(|_| rng.gen_range(2.0..8.0)).collect(),
            kc: vec![rng.gen_range(0.5..1.0); 2],
            z_r: vec![z_r; 2],
        };
        let c = [u8::from(rng.gen_bool(0.7)), u8::from(rng.gen_bool(0.5))];
        let history = vec![[y0, 0.0, f.kc[0], f.et0[0], z_r]; model.lag];
        let ctx = ZoneContext { model, history: &history, y0 };
        let guess: Vec<f64> = c.iter().map(|&ck| ck as f64 * rng.gen_range(p.u_min..p.u_max)).collect();
        let plan = solve_rates(ctx, &c, &f, &p, &guess).unwrap();
        let axis = |k: usize| if c[k] == 1 { grid(p.u_min, p.u_max, 200) } else { vec![0.0] };
        let mut best = f64::INFINITY;
        for &a in &axis(0) {
            for &b in &axis(1) {
                best = best.min(plan_cost(ctx, &c, &f, &p, &[a, b]).unwrap().total());
            }
        }
        worst = worst.max(plan.cost.total() / best.max(1e-12));
    }
    worst
}

fn reward_gae_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let boot = rng.gen_range(-5.0..5.0);
        let (g, l) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let (a, _) = gae(&r, &v, boot, g, l);
        let next = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        for t in 0..n {
            let brute: f64 = (t..n).map(|k| (g * l).powi((k - t) as i32) * (r[k] + g * next(k) - v[k])).sum();
            worst = worst.max((a[t] - brute).abs());
        }
    }
    let zone = &study_zones()[0];
    let mut p = MpcParams::new(zone.target_zone(0.40).unwrap(), zone.u_min, zone.u_max);
    let inside = reward(0.25, 0, 0.0, &p);
    let below = reward(0.19, 0, 0.0, &p);
    let above = reward(0.29, 0, 0.0, &p);
    let want_below = -p.q_lower * (p.tz.lower - 0.19);
    let want_above = -p.q_upper * (0.29 - p.tz.upper);
    p.r_c = 1000.0;
    let event = reward(0.25, 1, 10.0, &p);
    let want_event = -(1000.0 + p.water_cost(10.0));
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let pass = worst <= 1e-10
        && inside == 0.0
        && rel(below, want_below) <= 1e-12
        && rel(above, want_above) <= 1e-12
        && rel(event, want_event) <= 1e-12;
    Outcome::new(
        pass,
        format!("GAE worst {worst:.1e} over 1000 series; reward inside {}, below {below:.0}, above {above:.0}, event {event:.1}", inside + 0.0),
    )
}

fn trend_check(curves: &[(String, RewardCurve)], reproducible: bool) -> Outcome {
    let pass = reproducible && curves.iter().all(|(_, c)| c.tail_mean(0.1) >= c.head_mean(0.1));
    let detail: Vec<String> =
        curves.iter().map(|(name, c)| format!("{name} {:.3e} -> {:.3e}", c.head_mean(0.1), c.tail_mean(0.1))).collect();
    Outcome::new(pass, format!("first vs last 10%: {}; seeded rerun identical: {reproducible}", detail.join(", ")))
}

/// Share of consecutive 100-episode windows whose mean does not fall.
fn rising_share(curve: &RewardCurve) -> f64 {
    let w = reward_curve(&curve.episode_rewards, 100);
    if w.len() < 2 {
        return 1.0;
    }
    w.windows(2).filter(|p| p[1] >= p[0]).count() as f64 / (w.len() - 1) as f64
}

fn sync_check(models: &[ZoneModel]) -> Outcome {
    let seqs = vec![vec![0, 1, 0, 1, 0, 0, 0], vec![0, 0, 0, 1, 0, 0, 1], vec![0, 0, 0, 0, 1, 0, 1]];
    let example = find_limiting_zone(&seqs).unwrap() == 0 && binding_sequence(&seqs).unwrap() == seqs[0];
    let mut identical = true;
    let mut shared = true;
    for theta in [0.17, 0.2, 0.24] {
        let obs: Vec<ZoneObservation> = models
            .iter()
            .map(|m| ZoneObservation {
                state: m.env.model.hydrostatic_state_for(theta, 0.5).unwrap(),
                history: vec![[theta, 0.0, 0.9, 5.5, 0.5]; m.surrogate.lag],
                y0: theta,
            })
            .collect();
        let f = Forecast { rain: vec![0.5; 7], et0: vec![5.5; 7], kc: vec![0.9; 7], z_r: vec![0.5; 7] };
        let par = SyncOptions { horizon: 7, parallel: true, ..SyncOptions::default() };
        let a = schedule_all(models, &obs, &f, &par).unwrap();
        let b = schedule_all(models, &obs, &f, &SyncOptions { parallel: false, ..par }).unwrap();
        identical &= a == b;
        shared &= a.plans.iter().all(|p| p.decisions == a.binding.binding_c);
    }
    Outcome::new(
        example && identical && shared,
        format!("worked example {example}, parallel = sequential {identical}, shared sequence {shared}"),
    )
}

fn season_check(proposed: &SeasonReport, triggered: &SeasonReport) -> Outcome {
    let pass = proposed.prescribed_irrigation_mm < triggered.prescribed_irrigation_mm
        && proposed.predicted_yield_mg_ha >= triggered.predicted_yield_mg_ha
        && proposed.pivot_rotations > triggered.pivot_rotations;
    Outcome::new(
        pass,
        format!(
            "water {:.1} vs {:.1} mm, yield {:.3} vs {:.3} Mg/ha, rotations {} vs {}",
            proposed.prescribed_irrigation_mm,
            triggered.prescribed_irrigation_mm,
            proposed.predicted_yield_mg_ha,
            triggered.predicted_yield_mg_ha,
            proposed.pivot_rotations,
            triggered.pivot_rotations
        ),
    )
}

fn main() -> ExitCode {
    let total = Instant::now();
    let mut suite = Suite { failures: 0 };
    suite.run(1, "target-zone bounds", target_bounds_check);
    suite.run(2, "sealed-column conservation", conservation_check);
    suite.run(3, "gradient oracles", gradient_check);

    let cfg = SeasonConfig::load(&repo_path("configs/desk_dry.toml")).expect("season config");
    let weather = load_weather(&repo_path("data/weather_dry.csv")).expect("season weather");
    let zones: Vec<ZoneSpec> = cfg.zones.iter().map(|z| z.spec.clone()).collect();
    let plan = TrainingPlan::default();

    let mut surrogates = Vec::new();
    suite.run(4, "surrogate accuracy", || {
        for z in &zones {
            surrogates.push((z.name.clone(), train_zone_surrogate(z, &plan).expect("surrogate training")));
        }
        surrogate_check(&surrogates, &plan)
    });
    let models_only: Vec<SurrogateModel> = surrogates.iter().map(|(_, o)| o.model.clone()).collect();

    let grid_start = Instant::now();
    let grid_ratio = mpc_grid_ratio(&zones, &models_only, &cfg);
    let grid_secs = grid_start.elapsed().as_secs_f64();

    suite.run(6, "GAE and reward", reward_gae_check);

    let mut agents: Vec<Agent> = Vec::new();
    suite.run(7, "PPO trend", || {
        let mut curves = Vec::new();
        for z in &zones {
            let (agent, curve) = train_zone_agent(z, cfg.mad, &plan).expect("agent training");
            agents.push(agent);
            curves.push((z.name.clone(), curve));
        }
        let short = TrainingPlan { ppo: PpoHyper { episodes: 60, ..PpoHyper::default() }, seed: 3, ..plan.clone() };
        let reproducible = train_zone_agent(&zones[0], cfg.mad, &short).expect("short training")
            == train_zone_agent(&zones[0], cfg.mad, &short).expect("short training");
        let shares: Vec<String> =
            curves.iter().map(|(name, c)| format!("{name} {:.0}%", 100.0 * rising_share(c))).collect();
        // Reported only; not one of the ten criteria.
        println!("[INFO]    rising 100-episode windows (trend target 70%): {}", shares.join(", "));
        trend_check(&curves, reproducible)
    });

    let models: Vec<ZoneModel> = zones
        .iter()
        .zip(&agents)
        .zip(&models_only)
        .map(|((z, a), s)| {
            assemble_zone_model(z, cfg.mad, a.clone(), s.clone(), cfg.process_noise_std).expect("zone model")
        })
        .collect();
    suite.run(8, "synchronized scheduling", || sync_check(&models));

    let mut proposed_65 = None;
    suite.run(9, "dry season at MAD 0.65", || {
        let triggered = run_season(&cfg, &weather, Method::Triggered, None).expect("triggered season");
        let proposed = run_season(&cfg, &weather, Method::Proposed, Some(&models)).expect("proposed season");
        let out = season_check(&proposed, &triggered);
        proposed_65 = Some(proposed);
        out
    });
    let proposed_65 = proposed_65.expect("season ran");

    let tight = SeasonConfig { mad: 0.40, ..cfg.clone() };
    let mut proposed_40 = None;
    suite.run(10, "depletion monotonicity", || {
        let tight_run = run_season(&tight, &weather, Method::Proposed, Some(&models)).expect("MAD 0.40 season");
        let (w40, w65) = (tight_run.prescribed_irrigation_mm, proposed_65.prescribed_irrigation_mm);
        proposed_40 = Some(tight_run);
        Outcome::new(w40 >= w65, format!("proposed water {w40:.1} mm at MAD 0.40 vs {w65:.1} mm at 0.65"))
    });
    let proposed_40 = proposed_40.expect("season ran");

    suite.run(5, "MPC optimality and improvement", || {
        let failures = proposed_65.audit.improvement_failures + proposed_40.audit.improvement_failures;
        let solves = proposed_65.audit.solves + proposed_40.audit.solves;
        Outcome::new(
            grid_ratio <= 1.01 && failures == 0,
            format!(
                "worst cost / grid optimum {grid_ratio:.5} over 20 instances ({grid_secs:.1} s); \
                 {failures} improvement failures in {solves} season solves"
            ),
        )
    });

    println!("{} of 10 criteria passed in {:.1} min", 10 - suite.failures, total.elapsed().as_secs_f64() / 60.0);
    if suite.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
