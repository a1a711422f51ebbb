//! Central finite-difference checks of layer gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, Layer, LayerSpec, Mode, Padding, Stage, Tensor};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Largest elementwise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub label: String,
    pub input_err: f64,
    pub param_err: f64,
}

impl GradCheck {
    pub fn max_err(&self) -> f64 {
        self.input_err.max(self.param_err)
    }
}

/// Compares `backward` against central differences of `sum(upstream * forward(x))` in train mode.
pub fn check_layer(spec: &LayerSpec, batch_shape: &[usize], seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Layer::init("probe", spec, Stage::Features, &mut rng)?;
    // move biases and affine parameters off their constant initial values
    for (_, t) in layer.params_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let n: usize = batch_shape.iter().product();
    let x = Tensor::new(batch_shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let fwd_seed: u64 = rng.random();
    let run = |layer: &mut Layer, x: &Tensor| -> Result<Tensor> {
        let mut r = ChaCha8Rng::seed_from_u64(fwd_seed);
        let y = layer.forward(x, Mode::Train, &mut r)?;
        layer.clear_cache();
        Ok(y)
    };
    let probe = run(&mut layer, &x)?;
    let upstream: Vec<f64> = (0..probe.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = Tensor::new(probe.shape().to_vec(), upstream.clone())?;
    let objective = |y: &Tensor| y.data().iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>();

    layer.zero_grad();
    let mut r = ChaCha8Rng::seed_from_u64(fwd_seed);
    layer.forward(&x, Mode::Train, &mut r)?;
    let dx = layer.backward(&g, true)?;

    let mut num_dx = vec![0.0; n];
    for (i, slot) in num_dx.iter_mut().enumerate() {
        let mut xp = x.clone();
        xp.data_mut()[i] += FD_STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= FD_STEP;
        *slot = (objective(&run(&mut layer, &xp)?) - objective(&run(&mut layer, &xm)?)) / (2.0 * FD_STEP);
    }
    let input_err = max_rel_err(dx.data(), &num_dx, 1e-7);

    let analytic: Vec<Vec<f64>> = layer
        .params()
        .iter()
        .map(|(_, t)| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    let mut param_err: f64 = 0.0;
    for (p, a) in analytic.iter().enumerate() {
        let mut num = vec![0.0; a.len()];
        for (i, slot) in num.iter_mut().enumerate() {
            let orig = layer.params()[p].1.data()[i];
            layer.params_mut()[p].1.data_mut()[i] = orig + FD_STEP;
            let up = objective(&run(&mut layer, &x)?);
            layer.params_mut()[p].1.data_mut()[i] = orig - FD_STEP;
            let down = objective(&run(&mut layer, &x)?);
            layer.params_mut()[p].1.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        param_err = param_err.max(max_rel_err(a, &num, 1e-7));
    }
    Ok(GradCheck { label: format!("{spec} on {batch_shape:?}"), input_err, param_err })
}

/// Twenty-five randomised configurations covering every layer kind.
pub fn layer_cases(seed: u64) -> Vec<(LayerSpec, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    let mut cases = Vec::new();
    for padding in [Padding::Valid, Padding::Same] {
        for _ in 0..3 {
            let (c, f, kh, kw) = (r(1, 3), r(1, 3), r(1, 3), r(1, 3));
            let shape = vec![r(1, 2), c, kh + r(0, 3), kw + r(0, 3)];
            cases.push((LayerSpec::Conv2d { in_channels: c, filters: f, kh, kw, padding }, shape));
        }
    }
    for _ in 0..3 {
        let c = r(1, 3);
        cases.push((LayerSpec::BatchNorm { channels: c }, vec![r(2, 3), c, r(1, 4), r(1, 4)]));
    }
    for _ in 0..3 {
        cases.push((LayerSpec::MaxPool2d { ph: r(1, 3), pw: r(1, 3) }, vec![r(1, 2), r(1, 2), r(2, 7), r(2, 7)]));
    }
    for a in [Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
        cases.push((LayerSpec::Activation(a), vec![r(1, 3), r(2, 6)]));
    }
    for return_sequences in [true, false] {
        for _ in 0..2 {
            let d = r(1, 4);
            let shape = vec![r(1, 2), r(1, 5), d];
            cases.push((LayerSpec::BiLstm { input_dim: d, hidden: r(1, 4), return_sequences }, shape));
        }
    }
    for _ in 0..2 {
        let d = r(1, 6);
        cases.push((LayerSpec::Dense { inputs: d, units: r(1, 5) }, vec![r(1, 3), d]));
    }
    cases.push((LayerSpec::Dropout { rate: 0.5 }, vec![r(1, 3), r(3, 8)]));
    cases.push((LayerSpec::Dropout { rate: 0.0 }, vec![r(1, 3), r(3, 8)]));
    cases.push((LayerSpec::Softmax, vec![r(1, 3), r(2, 5)]));
    cases.push((LayerSpec::ToSequence, vec![r(1, 2), r(1, 3), r(1, 3), r(1, 4)]));
    cases
}
