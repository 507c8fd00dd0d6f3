//! Stacked LSTM with a linear head on the final hidden state.
//!
//! All parameters live in one flat vector so the optimizer and the model file
//! can treat them uniformly. Per layer the layout is `W` (4H × D_in, row
//! major), `U` (4H × H), `b` (4H), with gate blocks ordered input, forget,
//! cell, output. The head `V` (K × H) and `c` (K) follow the last layer.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmShape {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub outputs: usize,
}

/// Offsets of one layer's blocks inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    d_in: usize,
    w: usize,
    u: usize,
    b: usize,
}

impl LstmShape {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.layers == 0 || self.outputs == 0 {
            return Err(Error::invalid(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }

    fn layer(&self, l: usize) -> LayerOffsets {
        let h = self.hidden;
        let mut off = 0;
        let mut d_in = self.input;
        for _ in 0..l {
            off += 4 * h * d_in + 4 * h * h + 4 * h;
            d_in = h;
        }
        LayerOffsets {
            d_in,
            w: off,
            u: off + 4 * h * d_in,
            b: off + 4 * h * d_in + 4 * h * h,
        }
    }

    fn head(&self) -> (usize, usize) {
        let last = self.layer(self.layers - 1);
        let v = last.b + 4 * self.hidden;
        (v, v + self.outputs * self.hidden)
    }

    pub fn param_count(&self) -> usize {
        let (_, c) = self.head();
        c + self.outputs
    }

    /// Range of layer `l`'s bias block for gate `gate` (0 = i, 1 = f, 2 = g, 3 = o).
    pub fn gate_bias_range(&self, l: usize, gate: usize) -> std::ops::Range<usize> {
        let b = self.layer(l).b + gate * self.hidden;
        b..b + self.hidden
    }

    pub fn head_bias_range(&self) -> std::ops::Range<usize> {
        let (_, c) = self.head();
        c..c + self.outputs
    }

    pub fn head_weight_range(&self) -> std::ops::Range<usize> {
        let (v, c) = self.head();
        v..c
    }

    /// Uniform `±1/√H` draws with the forget-gate biases shifted by +1.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        let mut p: Vec<f64> = (0..self.param_count())
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        for l in 0..self.layers {
            for v in &mut p[self.gate_bias_range(l, 1)] {
                *v += 1.0;
            }
        }
        p
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations kept from a forward pass for back-propagation.
#[derive(Debug, Clone)]
pub struct Trace {
    steps: usize,
    /// Per layer: T × 4H activated gates (i, f, g, o).
    gates: Vec<Vec<f64>>,
    /// Per layer: T × H cell states.
    cells: Vec<Vec<f64>>,
    /// Per layer: T × H hidden states.
    hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Runs the network over a `T × D` row-major window (already scaled).
pub fn forward(shape: &LstmShape, params: &[f64], window: &[f64]) -> Result<Trace> {
    if params.len() != shape.param_count() {
        return Err(Error::invalid(format!(
            "parameter vector has {} entries, shape needs {}",
            params.len(),
            shape.param_count()
        )));
    }
    if window.is_empty() || window.len() % shape.input != 0 {
        return Err(Error::invalid(format!(
            "window of {} values is not a whole number of {}-feature steps",
            window.len(),
            shape.input
        )));
    }
    let t_len = window.len() / shape.input;
    let h = shape.hidden;
    let mut trace = Trace {
        steps: t_len,
        gates: Vec::with_capacity(shape.layers),
        cells: Vec::with_capacity(shape.layers),
        hidden: Vec::with_capacity(shape.layers),
        output: Vec::new(),
    };
    for l in 0..shape.layers {
        let off = shape.layer(l);
        let input: &[f64] = if l == 0 { window } else { &trace.hidden[l - 1] };
        let w = &params[off.w..off.u];
        let u = &params[off.u..off.b];
        let b = &params[off.b..off.b + 4 * h];
        let mut gates = vec![0.0; t_len * 4 * h];
        let mut cells = vec![0.0; t_len * h];
        let mut hs = vec![0.0; t_len * h];
        for t in 0..t_len {
            let x = &input[t * off.d_in..(t + 1) * off.d_in];
            let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            z.copy_from_slice(b);
            for (r, zr) in z.iter_mut().enumerate() {
                let wr = &w[r * off.d_in..(r + 1) * off.d_in];
                *zr += wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if t > 0 {
                let h_prev = &hs[(t - 1) * h..t * h];
                for (r, zr) in z.iter_mut().enumerate() {
                    let ur = &u[r * h..(r + 1) * h];
                    *zr += ur.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            for j in 0..h {
                z[j] = sigmoid(z[j]);
                z[h + j] = sigmoid(z[h + j]);
                z[2 * h + j] = z[2 * h + j].tanh();
                z[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            for j in 0..h {
                let c_prev = if t > 0 { cells[(t - 1) * h + j] } else { 0.0 };
                let c = z[h + j] * c_prev + z[j] * z[2 * h + j];
                cells[t * h + j] = c;
                hs[t * h + j] = z[3 * h + j] * c.tanh();
            }
        }
        trace.gates.push(gates);
        trace.cells.push(cells);
        trace.hidden.push(hs);
    }
    let last = &trace.hidden[shape.layers - 1][(t_len - 1) * h..t_len * h];
    let (v, c) = shape.head();
    trace.output = (0..shape.outputs)
        .map(|k| {
            params[c + k]
                + params[v + k * h..v + (k + 1) * h]
                    .iter()
                    .zip(last)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect();
    Ok(trace)
}

/// Accumulates into `grad` the gradient of a loss whose derivative with
/// respect to the network output is `d_out`.
pub fn backward(
    shape: &LstmShape,
    params: &[f64],
    window: &[f64],
    trace: &Trace,
    d_out: &[f64],
    grad: &mut [f64],
) {
    let h = shape.hidden;
    let t_len = trace.steps;
    let top = shape.layers - 1;
    let (v, c) = shape.head();
    let last = &trace.hidden[top][(t_len - 1) * h..t_len * h];

    // gradient w.r.t. each layer's hidden sequence coming from above
    let mut dh_seq = vec![0.0; t_len * h];
    for (k, &dy) in d_out.iter().enumerate() {
        grad[c + k] += dy;
        for j in 0..h {
            grad[v + k * h + j] += dy * last[j];
            dh_seq[(t_len - 1) * h + j] += dy * params[v + k * h + j];
        }
    }

    let mut dz = vec![0.0; 4 * h];
    for l in (0..shape.layers).rev() {
        let off = shape.layer(l);
        let input: &[f64] = if l == 0 { window } else { &trace.hidden[l - 1] };
        let gates = &trace.gates[l];
        let cells = &trace.cells[l];
        let hs = &trace.hidden[l];
        let mut dx_seq = if l > 0 { vec![0.0; t_len * off.d_in] } else { Vec::new() };
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for t in (0..t_len).rev() {
            let g = &gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let (gi, gf, gg, go) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let c = cells[t * h + j];
                let c_prev = if t > 0 { cells[(t - 1) * h + j] } else { 0.0 };
                let tc = c.tanh();
                let dh = dh_seq[t * h + j] + dh_next[j];
                let dc = dh * go * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * gg * gi * (1.0 - gi);
                dz[h + j] = dc * c_prev * gf * (1.0 - gf);
                dz[2 * h + j] = dc * gi * (1.0 - gg * gg);
                dz[3 * h + j] = dh * tc * go * (1.0 - go);
                dc_next[j] = dc * gf;
            }
            let x = &input[t * off.d_in..(t + 1) * off.d_in];
            for (r, &dzr) in dz.iter().enumerate() {
                grad[off.b + r] += dzr;
                let gw = &mut grad[off.w + r * off.d_in..off.w + (r + 1) * off.d_in];
                for (gwj, xj) in gw.iter_mut().zip(x) {
                    *gwj += dzr * xj;
                }
            }
            if t > 0 {
                let h_prev = &hs[(t - 1) * h..t * h];
                for (r, &dzr) in dz.iter().enumerate() {
                    let gu = &mut grad[off.u + r * h..off.u + (r + 1) * h];
                    for (guj, hj) in gu.iter_mut().zip(h_prev) {
                        *guj += dzr * hj;
                    }
                }
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &dzr) in dz.iter().enumerate() {
                let ur = &params[off.u + r * h..off.u + (r + 1) * h];
                for (d, uj) in dh_next.iter_mut().zip(ur) {
                    *d += dzr * uj;
                }
            }
            if l > 0 {
                let dx = &mut dx_seq[t * off.d_in..(t + 1) * off.d_in];
                for (r, &dzr) in dz.iter().enumerate() {
                    let wr = &params[off.w + r * off.d_in..off.w + (r + 1) * off.d_in];
                    for (d, wj) in dx.iter_mut().zip(wr) {
                        *d += dzr * wj;
                    }
                }
            }
        }
        dh_seq = dx_seq;
    }
}
