//! Actor-critic MLP: a shared two-layer tanh trunk feeding a two-class
//! decision head, a Gaussian rate head (mean, log-std) and a value head.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub input_size: usize,
    pub hidden: usize,
    /// hidden × input, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// hidden × hidden.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Output rows: logit(c=0), logit(c=1), rate mean, rate log-std, value.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

pub const OUT_LOGIT0: usize = 0;
pub const OUT_LOGIT1: usize = 1;
pub const OUT_MEAN: usize = 2;
pub const OUT_LOG_STD: usize = 3;
pub const OUT_VALUE: usize = 4;
pub const OUTPUTS: usize = 5;

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: [f64; OUTPUTS],
}

impl NetOutput {
    /// Decision probabilities `[p(c=0), p(c=1)]`.
    pub fn probs(&self) -> [f64; 2] {
        let (a, b) = (self.out[OUT_LOGIT0], self.out[OUT_LOGIT1]);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        [ea / (ea + eb), eb / (ea + eb)]
    }

    pub fn log_probs(&self) -> [f64; 2] {
        let (a, b) = (self.out[OUT_LOGIT0], self.out[OUT_LOGIT1]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        [a - lse, b - lse]
    }

    pub fn mean(&self) -> f64 {
        self.out[OUT_MEAN]
    }

    pub fn log_std(&self) -> f64 {
        self.out[OUT_LOG_STD].clamp(LOG_STD_MIN, LOG_STD_MAX)
    }

    pub fn value(&self) -> f64 {
        self.out[OUT_VALUE]
    }

    /// Log-density of the pre-squash rate sample `z`.
    pub fn gaussian_log_prob(&self, z: f64) -> f64 {
        let ls = self.log_std();
        let s = (z - self.mean()) / ls.exp();
        -0.5 * s * s - ls - HALF_LN_2PI
    }

    /// Log-probability of `(c, z)` without the squashing correction, which
    /// does not depend on the parameters.
    pub fn action_log_prob(&self, c: u8, z: f64) -> f64 {
        let lp = self.log_probs()[c as usize];
        if c == 1 {
            lp + self.gaussian_log_prob(z)
        } else {
            lp
        }
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let a = gain * (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect()
}

fn matvec(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += Wᵀ dy`, `dW += dy xᵀ`, `db += dy`.
fn matvec_backward(w: &[f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>, dw: &mut [f64], db: &mut [f64]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[r] += g;
        for (dwv, xv) in dw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *dwv += g * xv;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dxv, wv) in dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *dxv += g * wv;
            }
        }
    }
}

impl PolicyParams {
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        Self {
            input_size,
            hidden,
            w1: vec![0.0; hidden * input_size],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w_out: vec![0.0; OUTPUTS * hidden],
            b_out: vec![0.0; OUTPUTS],
        }
    }

    /// Glorot trunk; policy rows start a hundred times smaller so the
    /// initial policy is close to uniform with unit rate spread.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_size, hidden);
        p.w1 = glorot(hidden, input_size, 1.0, rng);
        p.w2 = glorot(hidden, hidden, 1.0, rng);
        let mut w_out = glorot(OUTPUTS, hidden, 1.0, rng);
        for r in [OUT_LOGIT0, OUT_LOGIT1, OUT_MEAN, OUT_LOG_STD] {
            w_out[r * hidden..(r + 1) * hidden].iter_mut().for_each(|v| *v *= 0.01);
        }
        p.w_out = w_out;
        p
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.w_out, &self.b_out]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w_out, &mut self.b_out]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size, self.hidden)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> NetOutput {
        debug_assert_eq!(x.len(), self.input_size);
        let mut h1 = vec![0.0; self.hidden];
        matvec(&self.w1, &self.b1, x, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = vec![0.0; self.hidden];
        matvec(&self.w2, &self.b2, &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = [0.0; OUTPUTS];
        matvec(&self.w_out, &self.b_out, &h2, &mut out);
        NetOutput { h1, h2, out }
    }

    /// Accumulates into `grads` the parameter gradient of a scalar whose
    /// derivative with respect to the raw outputs is `d_out`.
    pub fn backward(&self, x: &[f64], act: &NetOutput, d_out: &[f64; OUTPUTS], grads: &mut PolicyParams) {
        let mut dh2 = vec![0.0; self.hidden];
        matvec_backward(&self.w_out, &act.h2, d_out, Some(&mut dh2), &mut grads.w_out, &mut grads.b_out);
        for (g, h) in dh2.iter_mut().zip(&act.h2) {
            *g *= 1.0 - h * h;
        }
        let mut dh1 = vec![0.0; self.hidden];
        matvec_backward(&self.w2, &act.h1, &dh2, Some(&mut dh1), &mut grads.w2, &mut grads.b2);
        for (g, h) in dh1.iter_mut().zip(&act.h1) {
            *g *= 1.0 - h * h;
        }
        matvec_backward(&self.w1, x, &dh1, None, &mut grads.w1, &mut grads.b1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_is_uniform() {
        let p = PolicyParams::zeros(3, 4);
        let o = p.forward(&[1.0, -2.0, 0.5]);
        assert_eq!(o.probs(), [0.5, 0.5]);
        assert_eq!(o.value(), 0.0);
        assert_eq!(o.log_std(), 0.0);
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = PolicyParams::zeros(1, 2);
        p.b_out[OUT_LOG_STD] = 9.0;
        assert_eq!(p.forward(&[0.0]).log_std(), LOG_STD_MAX);
        p.b_out[OUT_LOG_STD] = -9.0;
        assert_eq!(p.forward(&[0.0]).log_std(), LOG_STD_MIN);
    }

    #[test]
    fn output_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyParams::init(4, 6, &mut rng);
        let x = [0.3, -0.7, 1.1, 0.05];
        let weights = [0.7, -1.3, 0.4, 2.0, -0.9];
        let f = |p: &PolicyParams| p.forward(&x).out.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
        let mut g = p.zeros_like();
        p.backward(&x, &p.forward(&x), &weights, &mut g);
        let h = 1e-6;
        for t in 0..6 {
            for i in 0..p.tensors()[t].len() {
                let mut a = p.clone();
                a.tensors_mut()[t][i] += h;
                let mut b = p.clone();
                b.tensors_mut()[t][i] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                let an = g.tensors()[t][i];
                assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1e-3), "tensor {t}[{i}]: {fd} vs {an}");
            }
        }
    }
}
