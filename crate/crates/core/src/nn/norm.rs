use crate::error::{Error, Result};
use crate::nn::{Mode, Tensor};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Running statistics kept by a batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::filled(&[channels], 1.0),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }
}

/// Values retained from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

/// Channel axis is 1; statistics are taken over every other axis.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Dimension(format!("batchnorm needs at least 2 dims, got {shape:?}")));
    }
    let b = shape[0];
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    Ok((b, c, inner))
}

pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<(Tensor, BatchNormCache)> {
    let (b, c, inner) = layout(input.shape())?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Dimension(format!(
            "batchnorm affine params have {} / {} entries for {c} channels",
            gamma.len(),
            beta.len()
        )));
    }
    let x = input.data();
    let idx = |bi: usize, ci: usize, k: usize| (bi * c + ci) * inner + k;
    let n = (b * inner) as f64;

    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    s += x[idx(bi, ci, 0)..idx(bi, ci, 0) + inner].iter().sum::<f64>();
                }
                let m = s / n;
                let mut v = 0.0;
                for bi in 0..b {
                    v += x[idx(bi, ci, 0)..idx(bi, ci, 0) + inner].iter().map(|&t| (t - m) * (t - m)).sum::<f64>();
                }
                mean[ci] = m;
                var[ci] = v / n;
            }
            let mom = stats.momentum;
            for ci in 0..c {
                let rm = &mut stats.mean.data_mut()[ci];
                *rm = mom * *rm + (1.0 - mom) * mean[ci];
                let rv = &mut stats.var.data_mut()[ci];
                *rv = mom * *rv + (1.0 - mom) * var[ci];
            }
            (mean, var)
        }
        Mode::Infer => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
    let mut x_hat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let (g, bt, m, is) = (gamma.data()[ci], beta.data()[ci], mean[ci], inv_std[ci]);
            let start = idx(bi, ci, 0);
            for k in start..start + inner {
                let xh = (x[k] - m) * is;
                x_hat[k] = xh;
                out[k] = g * xh + bt;
            }
        }
    }
    let cache = BatchNormCache { x_hat, inv_std, batch_stats: mode == Mode::Train };
    Ok((Tensor::new(input.shape().to_vec(), out)?, cache))
}

/// Returns (input grad, gamma grad, beta grad).
pub fn batchnorm_backward(
    shape: &[usize],
    gamma: &Tensor,
    cache: &BatchNormCache,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (b, c, inner) = layout(shape)?;
    let dy = grad_out.data();
    let n = (b * inner) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = vec![0.0; dy.len()];
    for ci in 0..c {
        let mut s_dy = 0.0;
        let mut s_dy_xh = 0.0;
        for bi in 0..b {
            let start = (bi * c + ci) * inner;
            let span = start..start + inner;
            for (d, xh) in dy[span.clone()].iter().zip(&cache.x_hat[span]) {
                s_dy += d;
                s_dy_xh += d * xh;
            }
        }
        dgamma[ci] = s_dy_xh;
        dbeta[ci] = s_dy;
        let g = gamma.data()[ci];
        let is = cache.inv_std[ci];
        for bi in 0..b {
            let start = (bi * c + ci) * inner;
            for k in start..start + inner {
                dx[k] = if cache.batch_stats {
                    g * is / n * (n * dy[k] - s_dy - cache.x_hat[k] * s_dy_xh)
                } else {
                    g * is * dy[k]
                };
            }
        }
    }
    Ok((Tensor::new(shape.to_vec(), dx)?, dgamma, dbeta))
}
