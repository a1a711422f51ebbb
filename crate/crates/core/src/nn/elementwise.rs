use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Mode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the forward output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Argument(format!("unknown activation `{other}`"))),
        }
    }
}

pub fn activation_forward(input: &Tensor, act: Activation) -> Tensor {
    input.map(|x| act.apply(x))
}

pub fn activation_backward(output: &Tensor, act: Activation, grad_out: &Tensor) -> Result<Tensor> {
    let g = output.data().iter().zip(grad_out.data()).map(|(&y, &g)| g * act.derivative_from_output(y)).collect();
    Tensor::new(output.shape().to_vec(), g)
}

/// Inverted dropout. Returns the output and the per-element multiplier (0 or 1/(1-rate)).
pub fn dropout_forward<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale }).collect();
    let out = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), out)?, Some(mask)))
}

/// Row-wise softmax over the last axis of a `[B, K]` tensor.
pub fn softmax_rows(input: &Tensor) -> Result<Tensor> {
    if input.ndim() != 2 {
        return Err(Error::Dimension(format!("softmax expects [B, K], got {:?}", input.shape())));
    }
    let k = input.shape()[1];
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    Tensor::new(input.shape().to_vec(), out)
}

pub fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let k = output.shape()[1];
    let mut gx = Vec::with_capacity(output.len());
    for (y, g) in output.data().chunks(k).zip(grad_out.data().chunks(k)) {
        let s: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        gx.extend(y.iter().zip(g).map(|(yi, gi)| yi * (gi - s)));
    }
    Tensor::new(output.shape().to_vec(), gx)
}
