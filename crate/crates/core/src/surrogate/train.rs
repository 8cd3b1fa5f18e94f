//! Mini-batch Adam on one-step-ahead mean squared error, with episode-level
//! train/validation/test splits and best-validation weight selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{r2, rmse, Episode, LstmWeights, SampleWindow, Scaler, SurrogateModel, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub units: usize,
    pub layers: usize,
    pub lag: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fractions of episodes for training and validation; the rest is test.
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    /// Desk scale: 32 units and a larger step than the full-scale setting.
    fn default() -> Self {
        Self {
            units: 32,
            layers: 2,
            lag: 5,
            epochs: 40,
            learning_rate: 1e-3,
            batch_size: 32,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainHyper {
    /// 400 units per layer, learning rate 1e-4.
    pub fn full_scale() -> Self {
        Self { units: 400, learning_rate: 1e-4, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss (scaled units) per epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch whose weights were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    /// One-step RMSE on the held-out test windows (m³/m³).
    pub test_rmse: Option<f64>,
    pub split_sizes: (usize, usize, usize),
}

fn split_episodes(windows: &[SampleWindow], hyper: &TrainHyper) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = windows.iter().map(|w| w.episode).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(0x5EED));
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_train = ((n as f64 * hyper.train_fraction).round() as usize).clamp(1.min(n), n);
    let n_val = ((n as f64 * hyper.validation_fraction).round() as usize).min(n - n_train);
    let role = |e: usize| {
        let pos = ids.iter().position(|&x| x == e).expect("known episode");
        if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        }
    };
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (i, w) in windows.iter().enumerate() {
        match role(w.episode) {
            0 => tr.push(i),
            1 => va.push(i),
            _ => te.push(i),
        }
    }
    (tr, va, te)
}

fn batch_loss(model: &SurrogateModel, windows: &[SampleWindow], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    idx.iter()
        .map(|&i| {
            let w = &windows[i];
            let z = model.weights.forward(&model.scaled_window(&w.records));
            let e = z - model.scaler.scale_target(w.target);
            e * e
        })
        .sum::<f64>()
        / idx.len() as f64
}

/// Trains a fresh network on `windows`. Returns the weights with the lowest
/// validation loss (training loss when there is no validation split).
pub fn train(windows: &[SampleWindow], hyper: &TrainHyper) -> Result<(SurrogateModel, TrainReport)> {
    if hyper.units == 0 || hyper.layers == 0 || hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid training hyperparameters {hyper:?}")));
    }
    if let Some(w) = windows.iter().find(|w| w.records.len() != hyper.lag + 1) {
        return Err(Error::InvalidParameter(format!(
            "window of {} records, expected {}",
            w.records.len(),
            hyper.lag + 1
        )));
    }
    let (train_idx, val_idx, test_idx) = split_episodes(windows, hyper);
    let fit_windows: Vec<SampleWindow> = train_idx.iter().map(|&i| windows[i].clone()).collect();
    let scaler = Scaler::fit(&fit_windows);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let weights = LstmWeights::init(FEATURE_COUNT, hyper.units, hyper.layers, &mut rng);
    let mut model = SurrogateModel::new(hyper.lag, scaler, weights);

    let mut report = TrainReport {
        train_loss: Vec::with_capacity(hyper.epochs),
        validation_loss: Vec::with_capacity(hyper.epochs),
        best_epoch: None,
        test_rmse: None,
        split_sizes: (train_idx.len(), val_idx.len(), test_idx.len()),
    };
    if hyper.epochs == 0 || train_idx.is_empty() {
        return Ok((model, report));
    }

    // Pre-scale every window once.
    let scaled: Vec<(Vec<Vec<f64>>, f64)> =
        windows.iter().map(|w| (model.scaled_window(&w.records), model.scaler.scale_target(w.target))).collect();
    let mut adam = Adam::new(hyper.learning_rate);
    let mut order = train_idx.clone();
    let mut grads = model.weights.zeros_like();
    let mut best: Option<(f64, LstmWeights)> = None;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            for t in grads.tensors_mut() {
                t.fill(0.0);
            }
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let (seq, target) = &scaled[i];
                let (z, trace) = model.weights.forward_traced(seq);
                let e = z - target;
                epoch_loss += e * e;
                model.weights.backward(&trace, scale * e, Some(&mut grads));
            }
            adam.update(model.weights.tensors_mut(), grads.tensors());
        }
        let train_loss = epoch_loss / order.len() as f64;
        if !train_loss.is_finite() || !model.weights.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let val_loss = if val_idx.is_empty() { train_loss } else { batch_loss(&model, windows, &val_idx) };
        log::info!("epoch {epoch}: train {train_loss:.3e}, validation {val_loss:.3e}");
        report.train_loss.push(train_loss);
        report.validation_loss.push(val_loss);
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.weights.clone()));
            report.best_epoch = Some(epoch);
        }
    }
    if let Some((_, w)) = best {
        model.weights = w;
    }
    if !test_idx.is_empty() {
        let y: Vec<f64> = test_idx.iter().map(|&i| windows[i].target).collect();
        let yhat: Vec<f64> = test_idx.iter().map(|&i| model.predict(&windows[i].records)).collect();
        report.test_rmse = Some(rmse(&y, &yhat)?);
    }
    Ok((model, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutScore {
    pub rmse: f64,
    pub r2: f64,
    pub points: usize,
}

/// Recursive `horizon`-day rollouts from the first full window of each
/// episode, scored against the simulated moisture over all episodes pooled.
pub fn evaluate_rollouts(model: &SurrogateModel, episodes: &[Episode], horizon: usize) -> Result<RolloutScore> {
    let lag = model.lag;
    let mut y = Vec::new();
    let mut yhat = Vec::new();
    for ep in episodes.iter().filter(|e| e.inputs.len() >= lag + horizon) {
        let window: Vec<_> = (0..=lag).map(|j| ep.record(j)).collect();
        let pred = model.rollout(&window, &ep.inputs[lag + 1..], horizon)?;
        yhat.extend(pred);
        y.extend_from_slice(&ep.y_end[lag..lag + horizon]);
    }
    if y.is_empty() {
        return Err(Error::InvalidParameter(format!("no episode covers {lag} + {horizon} days")));
    }
    Ok(RolloutScore { rmse: rmse(&y, &yhat)?, r2: r2(&y, &yhat)?, points: y.len() })
}
