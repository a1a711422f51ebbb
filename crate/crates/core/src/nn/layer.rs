use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_backward, conv2d_forward, Padding};
use crate::nn::dense::{dense_backward, dense_forward};
use crate::nn::elementwise::{
    activation_backward, activation_forward, dropout_forward, softmax_backward, softmax_rows, Activation,
};
use crate::nn::lstm::{bilstm_backward, bilstm_forward, BiLstmCache, BiLstmWeights, LstmWeights};
use crate::nn::norm::{batchnorm_backward, batchnorm_forward, BatchNormCache, RunningStats};
use crate::nn::pool::{maxpool2d_backward, maxpool2d_forward, pooled_extent};
use crate::nn::{Mode, Tensor};

/// Which of the three model stages a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// Convolutional feature extractor.
    Features = 1,
    /// Recurrent temporal model.
    Temporal = 2,
    /// Dense classifier head.
    Classifier = 3,
}

impl Stage {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Stage::Features),
            2 => Ok(Stage::Temporal),
            3 => Ok(Stage::Classifier),
            _ => Err(Error::Argument(format!("stage must be 1, 2 or 3, got {i}"))),
        }
    }
}

/// Hyperparameters of a layer, without weights.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        filters: usize,
        kh: usize,
        kw: usize,
        padding: Padding,
    },
    BatchNorm {
        channels: usize,
    },
    MaxPool2d {
        ph: usize,
        pw: usize,
    },
    Activation(Activation),
    BiLstm {
        input_dim: usize,
        hidden: usize,
        return_sequences: bool,
    },
    Dense {
        inputs: usize,
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
    /// `[B, C, F, T] -> [B, T, C*F]`: keeps the time axis, flattens channels and frequency.
    ToSequence,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::BiLstm { .. } => "bilstm",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
            LayerSpec::ToSequence => "to_sequence",
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Argument(format!("{} {name} must be positive", self.kind_name())))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Conv2d { in_channels, filters, kh, kw, .. } => {
                positive("in_channels", in_channels)?;
                positive("filters", filters)?;
                positive("kh", kh)?;
                positive("kw", kw)
            }
            LayerSpec::BatchNorm { channels } => positive("channels", channels),
            LayerSpec::MaxPool2d { ph, pw } => {
                positive("ph", ph)?;
                positive("pw", pw)
            }
            LayerSpec::BiLstm { input_dim, hidden, .. } => {
                positive("input_dim", input_dim)?;
                positive("hidden", hidden)
            }
            LayerSpec::Dense { inputs, units } => {
                positive("inputs", inputs)?;
                positive("units", units)
            }
            LayerSpec::Dropout { rate } => {
                if (0.0..1.0).contains(&rate) {
                    Ok(())
                } else {
                    Err(Error::Argument(format!("dropout rate must be in [0, 1), got {rate}")))
                }
            }
            LayerSpec::Activation(_) | LayerSpec::Softmax | LayerSpec::ToSequence => Ok(()),
        }
    }

    /// Output shape (without the batch axis) for a given per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::Dimension(format!("{} cannot take input of shape {input:?}", self.kind_name()));
        match *self {
            LayerSpec::Conv2d { in_channels, filters, kh, kw, padding } => {
                let [c, h, w] = <[usize; 3]>::try_from(input).map_err(|_| bad())?;
                if c != in_channels {
                    return Err(bad());
                }
                let oh = padding.output_extent(h, kh).ok_or_else(bad)?;
                let ow = padding.output_extent(w, kw).ok_or_else(bad)?;
                Ok(vec![filters, oh, ow])
            }
            LayerSpec::BatchNorm { channels } => {
                if input.first() != Some(&channels) {
                    return Err(bad());
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool2d { ph, pw } => {
                let [c, h, w] = <[usize; 3]>::try_from(input).map_err(|_| bad())?;
                Ok(vec![c, pooled_extent(h, ph), pooled_extent(w, pw)])
            }
            LayerSpec::Activation(_) | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(bad());
                }
                Ok(input.to_vec())
            }
            LayerSpec::BiLstm { input_dim, hidden, return_sequences } => {
                let [t, d] = <[usize; 2]>::try_from(input).map_err(|_| bad())?;
                if d != input_dim {
                    return Err(bad());
                }
                Ok(if return_sequences { vec![t, 2 * hidden] } else { vec![2 * hidden] })
            }
            LayerSpec::Dense { inputs, units } => {
                if input != [inputs] {
                    return Err(bad());
                }
                Ok(vec![units])
            }
            LayerSpec::ToSequence => {
                let [c, f, t] = <[usize; 3]>::try_from(input).map_err(|_| bad())?;
                Ok(vec![t, c * f])
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind_name())?;
        match self {
            LayerSpec::Conv2d { in_channels, filters, kh, kw, padding } => {
                write!(f, " in_channels={in_channels} filters={filters} kh={kh} kw={kw} padding={}", padding.as_str())
            }
            LayerSpec::BatchNorm { channels } => write!(f, " channels={channels}"),
            LayerSpec::MaxPool2d { ph, pw } => write!(f, " ph={ph} pw={pw}"),
            LayerSpec::Activation(a) => write!(f, " fn={}", a.as_str()),
            LayerSpec::BiLstm { input_dim, hidden, return_sequences } => {
                write!(f, " input_dim={input_dim} hidden={hidden} return_sequences={return_sequences}")
            }
            LayerSpec::Dense { inputs, units } => write!(f, " inputs={inputs} units={units}"),
            LayerSpec::Dropout { rate } => write!(f, " rate={rate:?}"),
            LayerSpec::Softmax | LayerSpec::ToSequence => Ok(()),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().ok_or_else(|| Error::Argument("empty layer description".into()))?;
        let mut kv = std::collections::BTreeMap::new();
        for p in parts {
            let (k, v) =
                p.split_once('=').ok_or_else(|| Error::Argument(format!("malformed layer attribute `{p}`")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Argument(format!("{kind}: missing `{k}`")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Argument(format!("{kind}: `{k}` is not an integer")))
        };
        let spec = match kind {
            "conv2d" => LayerSpec::Conv2d {
                in_channels: num("in_channels")?,
                filters: num("filters")?,
                kh: num("kh")?,
                kw: num("kw")?,
                padding: get("padding")?.parse()?,
            },
            "batchnorm" => LayerSpec::BatchNorm { channels: num("channels")? },
            "maxpool2d" => LayerSpec::MaxPool2d { ph: num("ph")?, pw: num("pw")? },
            "activation" => LayerSpec::Activation(get("fn")?.parse()?),
            "bilstm" => LayerSpec::BiLstm {
                input_dim: num("input_dim")?,
                hidden: num("hidden")?,
                return_sequences: get("return_sequences")?
                    .parse()
                    .map_err(|_| Error::Argument("bilstm: return_sequences must be true/false".into()))?,
            },
            "dense" => LayerSpec::Dense { inputs: num("inputs")?, units: num("units")? },
            "dropout" => LayerSpec::Dropout {
                rate: get("rate")?.parse().map_err(|_| Error::Argument("dropout: bad rate".into()))?,
            },
            "softmax" => LayerSpec::Softmax,
            "to_sequence" => LayerSpec::ToSequence,
            other => return Err(Error::Argument(format!("unknown layer kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Layer weights and behavior.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d { kernel: Tensor, bias: Tensor, padding: Padding },
    BatchNorm { gamma: Tensor, beta: Tensor, stats: RunningStats },
    MaxPool2d { pool: (usize, usize) },
    Activation(Activation),
    BiLstm { weights: BiLstmWeights, return_sequences: bool },
    Dense { weight: Tensor, bias: Tensor },
    Dropout { rate: f64 },
    Softmax,
    ToSequence,
}

#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor),
    Output(Tensor),
    BatchNorm(BatchNormCache),
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    BiLstm { input: Tensor, trace: BiLstmCache },
    Mask(Option<Vec<f64>>),
    Shape(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub stage: Stage,
    pub trainable: bool,
    kind: LayerKind,
    cache: Option<Cache>,
}

impl PartialEq for Layer {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.stage == other.stage
            && self.trainable == other.trainable
            && self.kind == other.kind
    }
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}

fn lstm_init<R: Rng + ?Sized>(d: usize, h: usize, rng: &mut R) -> LstmWeights {
    let limit = 1.0 / (h as f64).sqrt();
    let mut bias = Tensor::zeros(&[4 * h]);
    bias.data_mut()[h..2 * h].fill(1.0);
    LstmWeights { w_ih: uniform(&[d, 4 * h], limit, rng), w_hh: uniform(&[h, 4 * h], limit, rng), bias }
}

impl Layer {
    /// Builds a layer with freshly initialized weights.
    pub fn init<R: Rng + ?Sized>(name: impl Into<String>, spec: &LayerSpec, stage: Stage, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let kind = match *spec {
            LayerSpec::Conv2d { in_channels, filters, kh, kw, padding } => {
                let fan_in = (in_channels * kh * kw) as f64;
                LayerKind::Conv2d {
                    kernel: uniform(&[filters, in_channels, kh, kw], (6.0 / fan_in).sqrt(), rng),
                    bias: Tensor::zeros(&[filters]),
                    padding,
                }
            }
            LayerSpec::BatchNorm { channels } => LayerKind::BatchNorm {
                gamma: Tensor::filled(&[channels], 1.0),
                beta: Tensor::zeros(&[channels]),
                stats: RunningStats::new(channels),
            },
            LayerSpec::MaxPool2d { ph, pw } => LayerKind::MaxPool2d { pool: (ph, pw) },
            LayerSpec::Activation(a) => LayerKind::Activation(a),
            LayerSpec::BiLstm { input_dim, hidden, return_sequences } => LayerKind::BiLstm {
                weights: BiLstmWeights {
                    forward: lstm_init(input_dim, hidden, rng),
                    backward: lstm_init(input_dim, hidden, rng),
                },
                return_sequences,
            },
            LayerSpec::Dense { inputs, units } => LayerKind::Dense {
                weight: uniform(&[inputs, units], (6.0 / inputs as f64).sqrt(), rng),
                bias: Tensor::zeros(&[units]),
            },
            LayerSpec::Dropout { rate } => LayerKind::Dropout { rate },
            LayerSpec::Softmax => LayerKind::Softmax,
            LayerSpec::ToSequence => LayerKind::ToSequence,
        };
        Ok(Self { name: name.into(), stage, trainable: true, kind, cache: None })
    }

    pub fn from_kind(name: impl Into<String>, kind: LayerKind, stage: Stage) -> Self {
        Self { name: name.into(), stage, trainable: true, kind, cache: None }
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn spec(&self) -> LayerSpec {
        match &self.kind {
            LayerKind::Conv2d { kernel, padding, .. } => {
                let s = kernel.shape();
                LayerSpec::Conv2d { in_channels: s[1], filters: s[0], kh: s[2], kw: s[3], padding: *padding }
            }
            LayerKind::BatchNorm { gamma, .. } => LayerSpec::BatchNorm { channels: gamma.len() },
            LayerKind::MaxPool2d { pool } => LayerSpec::MaxPool2d { ph: pool.0, pw: pool.1 },
            LayerKind::Activation(a) => LayerSpec::Activation(*a),
            LayerKind::BiLstm { weights, return_sequences } => LayerSpec::BiLstm {
                input_dim: weights.forward.input_dim(),
                hidden: weights.forward.hidden(),
                return_sequences: *return_sequences,
            },
            LayerKind::Dense { weight, .. } => LayerSpec::Dense { inputs: weight.shape()[0], units: weight.shape()[1] },
            LayerKind::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            LayerKind::Softmax => LayerSpec::Softmax,
            LayerKind::ToSequence => LayerSpec::ToSequence,
        }
    }

    /// Learnable tensors in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match &self.kind {
            LayerKind::Conv2d { kernel, bias, .. } => vec![("kernel", kernel), ("bias", bias)],
            LayerKind::BatchNorm { gamma, beta, .. } => vec![("gamma", gamma), ("beta", beta)],
            LayerKind::BiLstm { weights, .. } => vec![
                ("fw.w_ih", &weights.forward.w_ih),
                ("fw.w_hh", &weights.forward.w_hh),
                ("fw.bias", &weights.forward.bias),
                ("bw.w_ih", &weights.backward.w_ih),
                ("bw.w_hh", &weights.backward.w_hh),
                ("bw.bias", &weights.backward.bias),
            ],
            LayerKind::Dense { weight, bias } => vec![("weight", weight), ("bias", bias)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match &mut self.kind {
            LayerKind::Conv2d { kernel, bias, .. } => vec![("kernel", kernel), ("bias", bias)],
            LayerKind::BatchNorm { gamma, beta, .. } => vec![("gamma", gamma), ("beta", beta)],
            LayerKind::BiLstm { weights, .. } => vec![
                ("fw.w_ih", &mut weights.forward.w_ih),
                ("fw.w_hh", &mut weights.forward.w_hh),
                ("fw.bias", &mut weights.forward.bias),
                ("bw.w_ih", &mut weights.backward.w_ih),
                ("bw.w_hh", &mut weights.backward.w_hh),
                ("bw.bias", &mut weights.backward.bias),
            ],
            LayerKind::Dense { weight, bias } => vec![("weight", weight), ("bias", bias)],
            _ => Vec::new(),
        }
    }

    /// Non-learnable state (batchnorm running statistics).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        match &self.kind {
            LayerKind::BatchNorm { stats, .. } => vec![("running_mean", &stats.mean), ("running_var", &stats.var)],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match &mut self.kind {
            LayerKind::BatchNorm { stats, .. } => {
                vec![("running_mean", &mut stats.mean), ("running_var", &mut stats.var)]
            }
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.clear_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Forward pass that records what the backward pass needs.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let (y, cache) = self.run(x, mode, rng)?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Stateless inference: no caches, no running-stat updates, dropout disabled.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match &self.kind {
            LayerKind::Conv2d { kernel, bias, padding } => conv2d_forward(x, kernel, bias, *padding),
            LayerKind::BatchNorm { gamma, beta, stats } => {
                let mut fixed = stats.clone();
                Ok(batchnorm_forward(x, gamma, beta, &mut fixed, Mode::Infer)?.0)
            }
            LayerKind::MaxPool2d { pool } => Ok(maxpool2d_forward(x, *pool)?.output),
            LayerKind::Activation(a) => Ok(activation_forward(x, *a)),
            LayerKind::BiLstm { weights, return_sequences } => {
                let (seq, _) = bilstm_forward(x, weights)?;
                if *return_sequences {
                    Ok(seq)
                } else {
                    final_states(&seq)
                }
            }
            LayerKind::Dense { weight, bias } => dense_forward(x, weight, bias),
            LayerKind::Dropout { .. } => Ok(x.clone()),
            LayerKind::Softmax => softmax_rows(x),
            LayerKind::ToSequence => to_sequence(x),
        }
    }

    fn run<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<(Tensor, Cache)> {
        let trainable = self.trainable;
        let out = match &mut self.kind {
            LayerKind::Conv2d { kernel, bias, padding } => {
                let y = conv2d_forward(x, kernel, bias, *padding)?;
                (y, Cache::Input(x.clone()))
            }
            LayerKind::BatchNorm { gamma, beta, stats } => {
                // Frozen batchnorm layers keep their running statistics fixed.
                let eff = if trainable { mode } else { Mode::Infer };
                let (y, c) = batchnorm_forward(x, gamma, beta, stats, eff)?;
                (y, Cache::BatchNorm(c))
            }
            LayerKind::MaxPool2d { pool } => {
                let p = maxpool2d_forward(x, *pool)?;
                (p.output, Cache::Pool { input_shape: x.shape().to_vec(), argmax: p.argmax })
            }
            LayerKind::Activation(a) => {
                let y = activation_forward(x, *a);
                let c = Cache::Output(y.clone());
                (y, c)
            }
            LayerKind::BiLstm { weights, return_sequences } => {
                let (seq, trace) = bilstm_forward(x, weights)?;
                let y = if *return_sequences { seq } else { final_states(&seq)? };
                (y, Cache::BiLstm { input: x.clone(), trace })
            }
            LayerKind::Dense { weight, bias } => {
                let y = dense_forward(x, weight, bias)?;
                (y, Cache::Input(x.clone()))
            }
            LayerKind::Dropout { rate } => {
                let (y, mask) = dropout_forward(x, *rate, mode, rng)?;
                (y, Cache::Mask(mask))
            }
            LayerKind::Softmax => {
                let y = softmax_rows(x)?;
                let c = Cache::Output(y.clone());
                (y, c)
            }
            LayerKind::ToSequence => {
                let y = to_sequence(x)?;
                (y, Cache::Shape(x.shape().to_vec()))
            }
        };
        Ok(out)
    }

    /// Consumes the forward cache, accumulates parameter gradients when trainable,
    /// and returns the gradient with respect to the layer input.
    pub fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State(format!("backward on layer `{}` before forward", self.name)))?;
        let trainable = self.trainable;
        let gx = match (&mut self.kind, cache) {
            (LayerKind::Conv2d { kernel, bias, padding }, Cache::Input(x)) => {
                let g = conv2d_backward(&x, kernel, grad_out, *padding, need_input_grad)?;
                if trainable {
                    kernel.accumulate_grad(&g.kernel);
                    bias.accumulate_grad(&g.bias);
                }
                g.input
            }
            (LayerKind::BatchNorm { gamma, beta, .. }, Cache::BatchNorm(c)) => {
                let (gx, dg, db) = batchnorm_backward(grad_out.shape(), gamma, &c, grad_out)?;
                if trainable {
                    gamma.accumulate_grad(&dg);
                    beta.accumulate_grad(&db);
                }
                gx
            }
            (LayerKind::MaxPool2d { .. }, Cache::Pool { input_shape, argmax }) => {
                maxpool2d_backward(&input_shape, &argmax, grad_out)?
            }
            (LayerKind::Activation(a), Cache::Output(y)) => activation_backward(&y, *a, grad_out)?,
            (LayerKind::BiLstm { weights, return_sequences }, Cache::BiLstm { input, trace }) => {
                let full = if *return_sequences {
                    grad_out.clone()
                } else {
                    expand_final_state_grad(grad_out, input.shape()[1])?
                };
                let g = bilstm_backward(&input, weights, &trace, &full)?;
                if trainable {
                    weights.forward.w_ih.accumulate_grad(&g.forward.w_ih);
                    weights.forward.w_hh.accumulate_grad(&g.forward.w_hh);
                    weights.forward.bias.accumulate_grad(&g.forward.bias);
                    weights.backward.w_ih.accumulate_grad(&g.backward.w_ih);
                    weights.backward.w_hh.accumulate_grad(&g.backward.w_hh);
                    weights.backward.bias.accumulate_grad(&g.backward.bias);
                }
                g.input
            }
            (LayerKind::Dense { weight, bias }, Cache::Input(x)) => {
                let (gx, gw, gb) = dense_backward(&x, weight, grad_out)?;
                if trainable {
                    weight.accumulate_grad(&gw);
                    bias.accumulate_grad(&gb);
                }
                gx
            }
            (LayerKind::Dropout { .. }, Cache::Mask(mask)) => match mask {
                Some(m) => {
                    let g = grad_out.data().iter().zip(&m).map(|(g, m)| g * m).collect();
                    Tensor::new(grad_out.shape().to_vec(), g)?
                }
                None => grad_out.clone(),
            },
            (LayerKind::Softmax, Cache::Output(y)) => softmax_backward(&y, grad_out)?,
            (LayerKind::ToSequence, Cache::Shape(shape)) => from_sequence(grad_out, &shape)?,
            _ => return Err(Error::State(format!("layer `{}` has a stale cache", self.name))),
        };
        Ok(gx)
    }
}

/// `[B, T, 2H] -> [B, 2H]`: forward state at the last step, reverse state at the first.
fn final_states(seq: &Tensor) -> Result<Tensor> {
    let [b, t, h2] = <[usize; 3]>::try_from(seq.shape()).expect("bilstm output is 3-d");
    let h = h2 / 2;
    let mut out = Vec::with_capacity(b * h2);
    for i in 0..b {
        let last = &seq.data()[(i * t + t - 1) * h2..(i * t + t) * h2];
        let first = &seq.data()[(i * t) * h2..(i * t + 1) * h2];
        out.extend_from_slice(&last[..h]);
        out.extend_from_slice(&first[h..]);
    }
    Tensor::new(vec![b, h2], out)
}

fn expand_final_state_grad(g: &Tensor, t: usize) -> Result<Tensor> {
    let [b, h2] = <[usize; 2]>::try_from(g.shape())
        .map_err(|_| Error::Dimension("bilstm final-state gradient must be [B, 2H]".into()))?;
    let h = h2 / 2;
    let mut full = vec![0.0; b * t * h2];
    for i in 0..b {
        let src = &g.data()[i * h2..(i + 1) * h2];
        full[(i * t + t - 1) * h2..][..h].copy_from_slice(&src[..h]);
        full[(i * t) * h2 + h..][..h].copy_from_slice(&src[h..]);
    }
    Tensor::new(vec![b, t, h2], full)
}

fn to_sequence(x: &Tensor) -> Result<Tensor> {
    let [b, c, f, t] = <[usize; 4]>::try_from(x.shape())
        .map_err(|_| Error::Dimension(format!("to_sequence expects [B,C,F,T], got {:?}", x.shape())))?;
    let d = c * f;
    let mut out = vec![0.0; x.len()];
    let src = x.data();
    for bi in 0..b {
        for ci in 0..c {
            for fi in 0..f {
                let row = &src[((bi * c + ci) * f + fi) * t..][..t];
                for (ti, &v) in row.iter().enumerate() {
                    out[(bi * t + ti) * d + ci * f + fi] = v;
                }
            }
        }
    }
    Tensor::new(vec![b, t, d], out)
}

fn from_sequence(g: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let [b, c, f, t] = <[usize; 4]>::try_from(shape).expect("cached 4-d shape");
    let d = c * f;
    let mut out = vec![0.0; g.len()];
    let src = g.data();
    for bi in 0..b {
        for ci in 0..c {
            for fi in 0..f {
                for ti in 0..t {
                    out[((bi * c + ci) * f + fi) * t + ti] = src[(bi * t + ti) * d + ci * f + fi];
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}
