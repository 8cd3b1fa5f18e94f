//! LSTM surrogate of one zone's root-zone moisture.
//!
//! Each daily record is `[y, water, kc, et0, z_r]`: root-zone moisture at the
//! start of the day, irrigation plus rain over the day (mm), crop
//! coefficient, reference evapotranspiration (mm) and rooting depth (m). A
//! window of `lag + 1` consecutive records predicts the next day's `y`.

mod data;
mod lstm;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{
    episode_windows, generate_episodes, generate_training_data, read_windows_csv, sample_drivers, simulate_episode,
    write_windows_csv, Episode, ForcingRanges, GenerationSettings,
};
pub use lstm::{ForwardTrace, LayerTrace, LstmLayer, LstmWeights, GATE_CELL, GATE_FORGET, GATE_INPUT, GATE_OUTPUT};
pub use train::{evaluate_rollouts, train, RolloutScore, TrainHyper, TrainReport};

pub const FEATURE_COUNT: usize = 5;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = ["y", "water_mm", "kc", "et0_mm", "z_r"];
pub const FEATURE_Y: usize = 0;
pub const FEATURE_WATER: usize = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub type Record = [f64; FEATURE_COUNT];

/// Exogenous part of a daily record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayInput {
    /// Irrigation plus rain (mm).
    pub water: f64,
    pub kc: f64,
    pub et0: f64,
    pub z_r: f64,
}

impl DayInput {
    pub fn record(&self, y: f64) -> Record {
        [y, self.water, self.kc, self.et0, self.z_r]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    /// Episode the window was cut from; splits never separate an episode.
    pub episode: usize,
    pub records: Vec<Record>,
    pub target: f64,
}

/// Per-feature z-score statistics. The target shares the `y` statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Record,
    pub std: Record,
}

impl Scaler {
    pub fn identity() -> Self {
        Self { mean: [0.0; FEATURE_COUNT], std: [1.0; FEATURE_COUNT] }
    }

    /// Statistics over every record of every window; zero spread maps to 1.
    pub fn fit(windows: &[SampleWindow]) -> Self {
        let mut sum = [0.0; FEATURE_COUNT];
        let mut sq = [0.0; FEATURE_COUNT];
        let mut n = 0.0;
        for r in windows.iter().flat_map(|w| w.records.iter()) {
            for j in 0..FEATURE_COUNT {
                sum[j] += r[j];
                sq[j] += r[j] * r[j];
            }
            n += 1.0;
        }
        if n == 0.0 {
            return Self::identity();
        }
        let mut s = Self::identity();
        for j in 0..FEATURE_COUNT {
            s.mean[j] = sum[j] / n;
            let var = (sq[j] / n - s.mean[j] * s.mean[j]).max(0.0);
            s.std[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        s
    }

    pub fn scale_record(&self, r: &Record) -> Vec<f64> {
        (0..FEATURE_COUNT).map(|j| (r[j] - self.mean[j]) / self.std[j]).collect()
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        (y - self.mean[FEATURE_Y]) / self.std[FEATURE_Y]
    }

    pub fn unscale_target(&self, z: f64) -> f64 {
        z * self.std[FEATURE_Y] + self.mean[FEATURE_Y]
    }
}

/// Trained network with its scalers and window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub version: u32,
    /// Past records in a window; windows hold `lag + 1` records.
    pub lag: usize,
    pub scaler: Scaler,
    pub weights: LstmWeights,
}

impl SurrogateModel {
    pub fn new(lag: usize, scaler: Scaler, weights: LstmWeights) -> Self {
        Self { version: MODEL_FORMAT_VERSION, lag, scaler, weights }
    }

    pub fn window_len(&self) -> usize {
        self.lag + 1
    }

    pub(crate) fn scaled_window(&self, window: &[Record]) -> Vec<Vec<f64>> {
        window.iter().map(|r| self.scaler.scale_record(r)).collect()
    }

    /// Next-day root-zone moisture for a raw (unscaled) window.
    pub fn predict(&self, window: &[Record]) -> f64 {
        self.scaler.unscale_target(self.weights.forward(&self.scaled_window(window)))
    }

    /// ∂ŷ/∂(raw feature) for every record of the window.
    pub fn input_gradient(&self, window: &[Record]) -> Vec<Record> {
        self.predict_with_gradient(window).1
    }

    pub fn predict_with_gradient(&self, window: &[Record]) -> (f64, Vec<Record>) {
        let (z, trace) = self.weights.forward_traced(&self.scaled_window(window));
        let dz = self.weights.backward(&trace, self.scaler.std[FEATURE_Y], None);
        let grads = dz
            .iter()
            .map(|d| {
                let mut g = [0.0; FEATURE_COUNT];
                for j in 0..FEATURE_COUNT {
                    g[j] = d[j] / self.scaler.std[j];
                }
                g
            })
            .collect();
        (self.scaler.unscale_target(z), grads)
    }

    /// Recursive prediction over `horizon` days. The first prediction comes
    /// from `initial_window`; each later window drops its oldest record and
    /// appends the previous prediction with the next entry of `future`.
    pub fn rollout(&self, initial_window: &[Record], future: &[DayInput], horizon: usize) -> Result<Vec<f64>> {
        if horizon == 0 || initial_window.len() != self.window_len() {
            return Err(Error::InvalidParameter(format!(
                "rollout needs horizon >= 1 and a {}-record window",
                self.window_len()
            )));
        }
        if future.len() + 1 < horizon {
            return Err(Error::InvalidParameter(format!(
                "{} future inputs cannot cover horizon {horizon}",
                future.len()
            )));
        }
        let mut window = initial_window.to_vec();
        let mut out = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let y = self.predict(&window);
            out.push(y);
            if k + 1 < horizon {
                window.remove(0);
                window.push(future[k].record(y));
            }
        }
        Ok(out)
    }

    /// Predicted `y_1..=y_N` when `history` holds the `lag` records before
    /// today, `y0` is today's moisture and `inputs[k]` drives day `k`.
    pub fn trajectory(&self, history: &[Record], y0: f64, inputs: &[DayInput]) -> Result<Vec<f64>> {
        Ok(self.trajectory_windows(history, y0, inputs)?.0)
    }

    fn trajectory_windows(
        &self,
        history: &[Record],
        y0: f64,
        inputs: &[DayInput],
    ) -> Result<(Vec<f64>, Vec<Vec<Record>>)> {
        if history.len() != self.lag || inputs.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "trajectory needs {} history records and at least one input",
                self.lag
            )));
        }
        let mut window: Vec<Record> = history.to_vec();
        window.push(inputs[0].record(y0));
        let mut ys = Vec::with_capacity(inputs.len());
        let mut windows = Vec::with_capacity(inputs.len());
        for k in 0..inputs.len() {
            let y = self.predict(&window);
            ys.push(y);
            windows.push(window.clone());
            if k + 1 < inputs.len() {
                window.remove(0);
                window.push(inputs[k + 1].record(y));
            }
        }
        Ok((ys, windows))
    }

    /// Trajectory plus the gradient of `J(y_1..=y_N)` with respect to each
    /// day's water input, given `dj_dy[k] = ∂J/∂y_{k+1}` as a function of the
    /// trajectory. The adjoint runs backward through the recursive rollout.
    pub fn trajectory_gradient<F>(
        &self,
        history: &[Record],
        y0: f64,
        inputs: &[DayInput],
        dj_dy: F,
    ) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        let (ys, windows) = self.trajectory_windows(history, y0, inputs)?;
        let n = inputs.len();
        let direct = dj_dy(&ys);
        // adj_y[j]: accumulated ∂J/∂y_j through later windows, j = 1..=n.
        let mut adj_y = vec![0.0; n + 1];
        let mut d_water = vec![0.0; n];
        let lag = self.lag as isize;
        for k in (0..n).rev() {
            let g = direct[k] + adj_y[k + 1];
            if g == 0.0 {
                continue;
            }
            let (_, grad) = self.predict_with_gradient(&windows[k]);
            for (p, gp) in grad.iter().enumerate() {
                let day = k as isize - lag + p as isize;
                if day >= 1 {
                    adj_y[day as usize] += g * gp[FEATURE_Y];
                }
                if day >= 0 {
                    d_water[day as usize] += g * gp[FEATURE_WATER];
                }
            }
        }
        Ok((ys, d_water))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "{}: model format {} is not {}",
                path.display(),
                model.version,
                MODEL_FORMAT_VERSION
            )));
        }
        if !model.weights.is_finite() || model.weights.input_size() != FEATURE_COUNT {
            return Err(Error::Config(format!("{}: malformed weights", path.display())));
        }
        Ok(model)
    }
}

/// Forward pass on a raw window; scaling is applied inside.
pub fn lstm_forward(model: &SurrogateModel, window: &[Record]) -> f64 {
    model.predict(window)
}

pub fn input_gradient(model: &SurrogateModel, window: &[Record]) -> Vec<Record> {
    model.input_gradient(window)
}

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(Error::InvalidParameter(format!(
            "series lengths {} and {} must match and be non-zero",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// Coefficient of determination; undefined when `y` is constant.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedMetric("R² of a constant series".into()));
    }
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - sse / sst)
}
