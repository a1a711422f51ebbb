use crate::error::{Error, Result};
use crate::nn::{Network, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for a fixed, ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { m: Vec::new(), v: Vec::new(), t: 0, config }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are treated as
/// having a zero gradient. Fails without touching anything if any gradient is non-finite.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    if state.m.is_empty() && state.t == 0 {
        state.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "optimizer tracks {} tensors but {} were supplied",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if state.m[i].shape() != p.shape() {
            return Err(Error::Dimension(format!(
                "optimizer moment {i} has shape {:?}, parameter has {:?}",
                state.m[i].shape(),
                p.shape()
            )));
        }
        if let Some(g) = p.grad() {
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in tensor {i} at element {pos}")));
            }
        }
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = p.grad().map(<[f64]>::to_vec) else {
            // zero gradient: moments decay, parameter update is m/(sqrt(v)+eps)
            let m = state.m[i].data_mut();
            m.iter_mut().for_each(|x| *x *= beta1);
            let v = state.v[i].data_mut();
            v.iter_mut().for_each(|x| *x *= beta2);
            let (m, v) = (state.m[i].data(), state.v[i].data());
            for ((w, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                *w -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
            continue;
        };
        let m = state.m[i].data_mut();
        for (mi, gi) in m.iter_mut().zip(&g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
        }
        let v = state.v[i].data_mut();
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((w, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            *w -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam bound to the trainable parameters of one network.
#[derive(Debug, Clone)]
pub struct Adam {
    state: AdamState,
    names: Vec<String>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { state: AdamState::new(config), names: Vec::new() }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        let mut named = net.trainable_params_mut();
        let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
        if self.state.t == 0 && self.names.is_empty() {
            self.names = names;
        } else if self.names != names {
            return Err(Error::State("set of trainable parameters changed between optimizer steps".into()));
        }
        let mut params: Vec<&mut Tensor> = named.iter_mut().map(|(_, t)| &mut **t).collect();
        adam_step(&mut params, &mut self.state)
    }
}
