//! Stacked LSTM with an affine read-out of the last hidden state, plus exact
//! reverse-mode gradients with respect to weights and inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Gate blocks inside the packed matrices, in this order.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_OUTPUT: usize = 2;
pub const GATE_CELL: usize = 3;

/// One LSTM layer. `w` is `4H × I`, `u` is `4H × H`, `b` is `4H`, all
/// row-major with the gate blocks stacked in the order input, forget,
/// output, candidate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_size: usize,
    pub units: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input_size: usize, units: usize) -> Self {
        Self {
            input_size,
            units,
            w: vec![0.0; 4 * units * input_size],
            u: vec![0.0; 4 * units * units],
            b: vec![0.0; 4 * units],
        }
    }

    /// Row `gate * H + unit` of `w`.
    pub fn w_row(&self, gate: usize, unit: usize) -> &[f64] {
        let r = gate * self.units + unit;
        &self.w[r * self.input_size..(r + 1) * self.input_size]
    }

    pub fn u_row(&self, gate: usize, unit: usize) -> &[f64] {
        let r = gate * self.units + unit;
        &self.u[r * self.units..(r + 1) * self.units]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    pub layers: Vec<LstmLayer>,
    pub w_y: Vec<f64>,
    pub b_y: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-layer, per-step activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LayerTrace {
    /// Gate activations `[i, f, o, c̃]` per step, each `4H`.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

impl LayerTrace {
    /// Per-step gate activations laid out `[i, f, o, c̃]`, each `units` long.
    pub fn gates(&self) -> &[Vec<f64>] {
        &self.gates
    }

    pub fn cells(&self) -> &[Vec<f64>] {
        &self.cells
    }

    pub fn hidden(&self) -> &[Vec<f64>] {
        &self.hidden
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn layers(&self) -> &[LayerTrace] {
        &self.layers
    }
}

impl LstmWeights {
    pub fn zeros(input_size: usize, units: usize, layer_count: usize) -> Self {
        let layers =
            (0..layer_count).map(|l| LstmLayer::zeros(if l == 0 { input_size } else { units }, units)).collect();
        Self { layers, w_y: vec![0.0; units], b_y: 0.0 }
    }

    /// Glorot-uniform weights, zero biases except a unit forget-gate bias.
    pub fn init<R: Rng + ?Sized>(input_size: usize, units: usize, layer_count: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(input_size, units, layer_count);
        for layer in &mut w.layers {
            let a = (6.0 / (layer.input_size + 4 * units) as f64).sqrt();
            layer.w.iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
            let a = (6.0 / (units + 4 * units) as f64).sqrt();
            layer.u.iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
            layer.b[GATE_FORGET * units..(GATE_FORGET + 1) * units].fill(1.0);
        }
        let a = (6.0 / (units + 1) as f64).sqrt();
        w.w_y.iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
        w
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size
    }

    pub fn units(&self) -> usize {
        self.w_y.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.u);
            out.push(&l.b);
        }
        out.push(&self.w_y);
        out.push(std::slice::from_ref(&self.b_y));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.u);
            out.push(&mut l.b);
        }
        out.push(&mut self.w_y);
        out.push(std::slice::from_mut(&mut self.b_y));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Output of the read-out after the last step of `seq`.
    pub fn forward(&self, seq: &[Vec<f64>]) -> f64 {
        self.forward_traced(seq).0
    }

    pub fn forward_traced(&self, seq: &[Vec<f64>]) -> (f64, ForwardTrace) {
        let mut trace = ForwardTrace { inputs: seq.to_vec(), layers: Vec::with_capacity(self.layers.len()) };
        let mut below: Vec<Vec<f64>> = seq.to_vec();
        for layer in &self.layers {
            let lt = layer_forward(layer, &below);
            below = lt.hidden.clone();
            trace.layers.push(lt);
        }
        let h = below.last().expect("non-empty sequence");
        let y = self.b_y + self.w_y.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        (y, trace)
    }

    /// Back-propagates `dy` (∂L/∂ŷ). Adds weight gradients into `grads` when
    /// given and returns ∂L/∂input for every step.
    pub fn backward(&self, trace: &ForwardTrace, dy: f64, mut grads: Option<&mut LstmWeights>) -> Vec<Vec<f64>> {
        let steps = trace.inputs.len();
        let top = trace.layers.last().expect("at least one layer");
        let h_last = &top.hidden[steps - 1];
        if let Some(g) = grads.as_deref_mut() {
            g.b_y += dy;
            for (gw, h) in g.w_y.iter_mut().zip(h_last) {
                *gw += dy * h;
            }
        }
        // Gradient reaching each layer's hidden outputs from above.
        let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; self.units()]; steps];
        for (d, w) in d_out[steps - 1].iter_mut().zip(&self.w_y) {
            *d = dy * w;
        }
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let inputs: &[Vec<f64>] = if li == 0 { &trace.inputs } else { &trace.layers[li - 1].hidden };
            let g = grads.as_deref_mut().map(|g| &mut g.layers[li]);
            d_out = layer_backward(layer, &trace.layers[li], inputs, &d_out, g);
        }
        d_out
    }
}

fn layer_forward(layer: &LstmLayer, inputs: &[Vec<f64>]) -> LayerTrace {
    let hsz = layer.units;
    let isz = layer.input_size;
    let mut trace = LayerTrace {
        gates: Vec::with_capacity(inputs.len()),
        cells: Vec::with_capacity(inputs.len()),
        hidden: Vec::with_capacity(inputs.len()),
    };
    let mut h = vec![0.0; hsz];
    let mut c = vec![0.0; hsz];
    for x in inputs {
        let mut pre = layer.b.clone();
        for (r, p) in pre.iter_mut().enumerate() {
            let wr = &layer.w[r * isz..(r + 1) * isz];
            let ur = &layer.u[r * hsz..(r + 1) * hsz];
            let mut acc = 0.0;
            for (a, b) in wr.iter().zip(x) {
                acc += a * b;
            }
            for (a, b) in ur.iter().zip(&h) {
                acc += a * b;
            }
            *p += acc;
        }
        for (r, p) in pre.iter_mut().enumerate() {
            *p = if r < GATE_CELL * hsz { sigmoid(*p) } else { p.tanh() };
        }
        let mut c_new = vec![0.0; hsz];
        let mut h_new = vec![0.0; hsz];
        for j in 0..hsz {
            let (i, f, o, g) = (pre[j], pre[hsz + j], pre[2 * hsz + j], pre[3 * hsz + j]);
            c_new[j] = f * c[j] + i * g;
            h_new[j] = o * c_new[j].tanh();
        }
        c = c_new.clone();
        h = h_new.clone();
        trace.gates.push(pre);
        trace.cells.push(c_new);
        trace.hidden.push(h_new);
    }
    trace
}

fn layer_backward(
    layer: &LstmLayer,
    trace: &LayerTrace,
    inputs: &[Vec<f64>],
    d_hidden: &[Vec<f64>],
    mut grads: Option<&mut LstmLayer>,
) -> Vec<Vec<f64>> {
    let hsz = layer.units;
    let isz = layer.input_size;
    let steps = inputs.len();
    let mut d_inputs = vec![vec![0.0; isz]; steps];
    let mut dh_next = vec![0.0; hsz];
    let mut dc_next = vec![0.0; hsz];
    let mut dpre = vec![0.0; 4 * hsz];
    let zero = vec![0.0; hsz];
    for t in (0..steps).rev() {
        let gates = &trace.gates[t];
        let c = &trace.cells[t];
        let c_prev = if t > 0 { &trace.cells[t - 1] } else { &zero };
        let h_prev = if t > 0 { &trace.hidden[t - 1] } else { &zero };
        for j in 0..hsz {
            let (i, f, o, g) = (gates[j], gates[hsz + j], gates[2 * hsz + j], gates[3 * hsz + j]);
            let dh = d_hidden[t][j] + dh_next[j];
            let tc = c[j].tanh();
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dpre[j] = dc * g * i * (1.0 - i);
            dpre[hsz + j] = dc * c_prev[j] * f * (1.0 - f);
            dpre[2 * hsz + j] = dh * tc * o * (1.0 - o);
            dpre[3 * hsz + j] = dc * i * (1.0 - g * g);
            dc_next[j] = dc * f;
        }
        dh_next.fill(0.0);
        let dx = &mut d_inputs[t];
        for (r, &d) in dpre.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let wr = &layer.w[r * isz..(r + 1) * isz];
            for (a, w) in dx.iter_mut().zip(wr) {
                *a += d * w;
            }
            let ur = &layer.u[r * hsz..(r + 1) * hsz];
            for (a, u) in dh_next.iter_mut().zip(ur) {
                *a += d * u;
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            let x = &inputs[t];
            for (r, &d) in dpre.iter().enumerate() {
                g.b[r] += d;
                if d == 0.0 {
                    continue;
                }
                for (gw, xv) in g.w[r * isz..(r + 1) * isz].iter_mut().zip(x) {
                    *gw += d * xv;
                }
                for (gu, hv) in g.u[r * hsz..(r + 1) * hsz].iter_mut().zip(h_prev) {
                    *gu += d * hv;
                }
            }
        }
    }
    d_inputs
}
