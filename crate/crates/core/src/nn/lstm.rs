use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::par;

/// Weights of one LSTM direction. Gate blocks are laid out `[i | f | g | o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `[D, 4H]`
    pub w_ih: Tensor,
    /// `[H, 4H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[0]
    }

    fn check(&self, d: usize) -> Result<usize> {
        let h = self.hidden();
        if h == 0 {
            return Err(Error::Argument("LSTM hidden size must be positive".into()));
        }
        if self.w_ih.shape() != [d, 4 * h] || self.w_hh.shape() != [h, 4 * h] || self.bias.shape() != [4 * h] {
            return Err(Error::Dimension(format!(
                "LSTM weights {:?}/{:?}/{:?} inconsistent with input dim {d}, hidden {h}",
                self.w_ih.shape(),
                self.w_hh.shape(),
                self.bias.shape()
            )));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmWeights {
    pub forward: LstmWeights,
    pub backward: LstmWeights,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one direction for one sample, stored in processing order.
#[derive(Debug, Clone, Default)]
pub struct DirectionTrace {
    /// Post-activation gates per step, `[steps, 4H]`.
    gates: Vec<f64>,
    /// Cell state per step, `[steps, H]`.
    cells: Vec<f64>,
    /// Hidden state per step, `[steps, H]`.
    hidden: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct BiLstmCache {
    traces: Vec<(DirectionTrace, DirectionTrace)>,
}

fn run_direction(w: &LstmWeights, xs: &[f64], t_len: usize, d: usize, reverse: bool) -> DirectionTrace {
    let h = w.hidden();
    let g4 = 4 * h;
    let mut tr =
        DirectionTrace { gates: vec![0.0; t_len * g4], cells: vec![0.0; t_len * h], hidden: vec![0.0; t_len * h] };
    let wih = w.w_ih.data();
    let whh = w.w_hh.data();
    let mut z = vec![0.0; g4];
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        z.copy_from_slice(w.bias.data());
        let x = &xs[t * d..(t + 1) * d];
        for (di, &xv) in x.iter().enumerate() {
            if xv != 0.0 {
                let row = &wih[di * g4..(di + 1) * g4];
                z.iter_mut().zip(row).for_each(|(a, b)| *a += xv * b);
            }
        }
        if step > 0 {
            let hp = &tr.hidden[(step - 1) * h..step * h];
            for (hi, &hv) in hp.iter().enumerate() {
                let row = &whh[hi * g4..(hi + 1) * g4];
                z.iter_mut().zip(row).for_each(|(a, b)| *a += hv * b);
            }
        }
        let gates = &mut tr.gates[step * g4..(step + 1) * g4];
        for j in 0..h {
            gates[j] = sigmoid(z[j]);
            gates[h + j] = sigmoid(z[h + j]);
            gates[2 * h + j] = z[2 * h + j].tanh();
            gates[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        for j in 0..h {
            let c_prev = if step > 0 { tr.cells[(step - 1) * h + j] } else { 0.0 };
            let c = gates[h + j] * c_prev + gates[j] * gates[2 * h + j];
            tr.cells[step * h + j] = c;
            tr.hidden[step * h + j] = gates[3 * h + j] * c.tanh();
        }
    }
    tr
}

/// Bidirectional LSTM over `[B, T, D]`, returning `[B, T, 2H]` with the forward
/// state in the first half of the feature axis and the reverse state in the second.
pub fn bilstm_forward(input: &Tensor, weights: &BiLstmWeights) -> Result<(Tensor, BiLstmCache)> {
    let [b, t_len, d] = <[usize; 3]>::try_from(input.shape())
        .map_err(|_| Error::Dimension(format!("BiLSTM expects [B,T,D], got {:?}", input.shape())))?;
    let h = weights.forward.check(d)?;
    if weights.backward.check(d)? != h {
        return Err(Error::Dimension("BiLSTM directions disagree on hidden size".into()));
    }
    let per_in = t_len * d;
    let traces = par::map_range(b, |i| {
        let xs = &input.data()[i * per_in..(i + 1) * per_in];
        (run_direction(&weights.forward, xs, t_len, d, false), run_direction(&weights.backward, xs, t_len, d, true))
    });
    let mut out = vec![0.0; b * t_len * 2 * h];
    for (i, (fw, bw)) in traces.iter().enumerate() {
        for t in 0..t_len {
            let row = &mut out[(i * t_len + t) * 2 * h..(i * t_len + t + 1) * 2 * h];
            row[..h].copy_from_slice(&fw.hidden[t * h..(t + 1) * h]);
            let step = t_len - 1 - t;
            row[h..].copy_from_slice(&bw.hidden[step * h..(step + 1) * h]);
        }
    }
    Ok((Tensor::new(vec![b, t_len, 2 * h], out)?, BiLstmCache { traces }))
}

pub struct DirectionGrads {
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub bias: Vec<f64>,
}

pub struct BiLstmGrads {
    pub input: Tensor,
    pub forward: DirectionGrads,
    pub backward: DirectionGrads,
}

/// Backpropagation through time for one direction. `dh_out` is indexed by
/// processing step. Accumulates into `dx` (indexed by original time).
#[allow(clippy::too_many_arguments)]
fn bptt(
    w: &LstmWeights,
    tr: &DirectionTrace,
    xs: &[f64],
    dh_out: &[f64],
    t_len: usize,
    d: usize,
    reverse: bool,
    dx: &mut [f64],
    acc: &mut DirectionGrads,
) {
    let h = w.hidden();
    let g4 = 4 * h;
    let wih = w.w_ih.data();
    let whh = w.w_hh.data();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; g4];
    for step in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - step } else { step };
        let gates = &tr.gates[step * g4..(step + 1) * g4];
        for j in 0..h {
            let (ig, fg, gg, og) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let c = tr.cells[step * h + j];
            let c_prev = if step > 0 { tr.cells[(step - 1) * h + j] } else { 0.0 };
            let tc = c.tanh();
            let dh = dh_out[step * h + j] + dh_next[j];
            let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * gg * ig * (1.0 - ig);
            dz[h + j] = dc * c_prev * fg * (1.0 - fg);
            dz[2 * h + j] = dc * ig * (1.0 - gg * gg);
            dz[3 * h + j] = dh * tc * og * (1.0 - og);
            dc_next[j] = dc * fg;
        }
        acc.bias.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        let x = &xs[t * d..(t + 1) * d];
        for (di, &xv) in x.iter().enumerate() {
            let grow = &mut acc.w_ih[di * g4..(di + 1) * g4];
            grow.iter_mut().zip(&dz).for_each(|(a, b)| *a += xv * b);
            let wrow = &wih[di * g4..(di + 1) * g4];
            dx[t * d + di] += wrow.iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>();
        }
        if step > 0 {
            let hp = &tr.hidden[(step - 1) * h..step * h];
            for (hi, &hv) in hp.iter().enumerate() {
                let grow = &mut acc.w_hh[hi * g4..(hi + 1) * g4];
                grow.iter_mut().zip(&dz).for_each(|(a, b)| *a += hv * b);
                let wrow = &whh[hi * g4..(hi + 1) * g4];
                dh_next[hi] = wrow.iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

fn zero_grads(w: &LstmWeights) -> DirectionGrads {
    DirectionGrads { w_ih: vec![0.0; w.w_ih.len()], w_hh: vec![0.0; w.w_hh.len()], bias: vec![0.0; w.bias.len()] }
}

fn add_into(dst: &mut DirectionGrads, src: &DirectionGrads) {
    dst.w_ih.iter_mut().zip(&src.w_ih).for_each(|(a, b)| *a += b);
    dst.w_hh.iter_mut().zip(&src.w_hh).for_each(|(a, b)| *a += b);
    dst.bias.iter_mut().zip(&src.bias).for_each(|(a, b)| *a += b);
}

pub fn bilstm_backward(
    input: &Tensor,
    weights: &BiLstmWeights,
    cache: &BiLstmCache,
    grad_out: &Tensor,
) -> Result<BiLstmGrads> {
    let [b, t_len, d] = <[usize; 3]>::try_from(input.shape())
        .map_err(|_| Error::Dimension(format!("BiLSTM expects [B,T,D], got {:?}", input.shape())))?;
    let h = weights.forward.hidden();
    if grad_out.shape() != [b, t_len, 2 * h] || cache.traces.len() != b {
        return Err(Error::Dimension("BiLSTM upstream gradient does not match forward pass".into()));
    }
    let per_in = t_len * d;
    let partials = par::map_range(b, |i| {
        let xs = &input.data()[i * per_in..(i + 1) * per_in];
        let go = &grad_out.data()[i * t_len * 2 * h..(i + 1) * t_len * 2 * h];
        let mut dh_f = vec![0.0; t_len * h];
        let mut dh_b = vec![0.0; t_len * h];
        for t in 0..t_len {
            dh_f[t * h..(t + 1) * h].copy_from_slice(&go[t * 2 * h..t * 2 * h + h]);
            let step = t_len - 1 - t;
            dh_b[step * h..(step + 1) * h].copy_from_slice(&go[t * 2 * h + h..(t + 1) * 2 * h]);
        }
        let mut dx = vec![0.0; per_in];
        let mut gf = zero_grads(&weights.forward);
        let mut gb = zero_grads(&weights.backward);
        let (trf, trb) = &cache.traces[i];
        bptt(&weights.forward, trf, xs, &dh_f, t_len, d, false, &mut dx, &mut gf);
        bptt(&weights.backward, trb, xs, &dh_b, t_len, d, true, &mut dx, &mut gb);
        (dx, gf, gb)
    });
    let mut gf = zero_grads(&weights.forward);
    let mut gb = zero_grads(&weights.backward);
    let mut dx = Vec::with_capacity(b * per_in);
    for (px, pf, pb) in &partials {
        dx.extend_from_slice(px);
        add_into(&mut gf, pf);
        add_into(&mut gb, pb);
    }
    Ok(BiLstmGrads { input: Tensor::new(input.shape().to_vec(), dx)?, forward: gf, backward: gb })
}
