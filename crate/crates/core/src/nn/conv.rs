use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    /// (before, after) zero padding for a kernel extent.
    pub fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let before = (k - 1) / 2;
                (before, k - 1 - before)
            }
        }
    }

    pub fn output_extent(self, n: usize, k: usize) -> Option<usize> {
        let (a, b) = self.amounts(k);
        (n + a + b).checked_sub(k).map(|d| d + 1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        }
    }
}

impl std::str::FromStr for Padding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Padding::Valid),
            "same" => Ok(Padding::Same),
            other => Err(Error::Argument(format!("unknown padding `{other}`"))),
        }
    }
}

/// Geometry shared by the forward and backward passes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub hp: usize,
    pub wp: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], padding: Padding) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::Dimension(format!("conv2d expects 4-d input and kernel, got {input:?} and {kernel:?}")));
        }
        let (c, h, w) = (input[1], input[2], input[3]);
        let (f, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if c != kc {
            return Err(Error::Dimension(format!("conv2d input has {c} channels but kernel expects {kc}")));
        }
        let (pt, pb) = padding.amounts(kh);
        let (pl, pr) = padding.amounts(kw);
        let (hp, wp) = (h + pt + pb, w + pl + pr);
        if kh > hp || kw > wp {
            return Err(Error::Dimension(format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}")));
        }
        Ok(Self { c, h, w, f, kh, kw, pad_top: pt, pad_left: pl, hp, wp, oh: hp - kh + 1, ow: wp - kw + 1 })
    }

    fn padded(&self, x: &[f64]) -> Vec<f64> {
        if self.hp == self.h && self.wp == self.w {
            return x.to_vec();
        }
        let mut out = vec![0.0; self.c * self.hp * self.wp];
        for c in 0..self.c {
            for r in 0..self.h {
                let src = &x[(c * self.h + r) * self.w..][..self.w];
                let dst = (c * self.hp + r + self.pad_top) * self.wp + self.pad_left;
                out[dst..dst + self.w].copy_from_slice(src);
            }
        }
        out
    }

    fn unpadded(&self, xp: &[f64], out: &mut [f64]) {
        for c in 0..self.c {
            for r in 0..self.h {
                let src = (c * self.hp + r + self.pad_top) * self.wp + self.pad_left;
                out[(c * self.h + r) * self.w..][..self.w].copy_from_slice(&xp[src..src + self.w]);
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn forward_one(g: &ConvGeom, xp: &[f64], kernel: &[f64], bias: &[f64], out: &mut [f64]) {
    let plane = g.oh * g.ow;
    for f in 0..g.f {
        let dst = &mut out[f * plane..(f + 1) * plane];
        dst.fill(bias[f]);
        for c in 0..g.c {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let wv = kernel[((f * g.c + c) * g.kh + ki) * g.kw + kj];
                    for r in 0..g.oh {
                        let src = &xp[(c * g.hp + r + ki) * g.wp + kj..][..g.ow];
                        axpy(&mut dst[r * g.ow..(r + 1) * g.ow], wv, src);
                    }
                }
            }
        }
    }
}

/// Stride-1 2-d cross-correlation: `[B,C,H,W] * [F,C,kh,kw] + bias[F] -> [B,F,H',W']`.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor, padding: Padding) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), padding)?;
    if bias.len() != g.f {
        return Err(Error::Dimension(format!("bias has {} entries for {} filters", bias.len(), g.f)));
    }
    let b = input.shape()[0];
    let per_in = g.c * g.h * g.w;
    let per_out = g.f * g.oh * g.ow;
    let mut out = vec![0.0; b * per_out];
    par::for_each_chunk_mut(&mut out, per_out, |i, dst| {
        let xp = g.padded(&input.data()[i * per_in..(i + 1) * per_in]);
        forward_one(&g, &xp, kernel.data(), bias.data(), dst);
    });
    Tensor::new(vec![b, g.f, g.oh, g.ow], out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of `conv2d_forward` given upstream gradient `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    padding: Padding,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), padding)?;
    let b = input.shape()[0];
    if grad_out.shape() != [b, g.f, g.oh, g.ow] {
        return Err(Error::Dimension(format!(
            "conv2d upstream gradient {:?} does not match output [{b}, {}, {}, {}]",
            grad_out.shape(),
            g.f,
            g.oh,
            g.ow
        )));
    }
    let per_in = g.c * g.h * g.w;
    let per_out = g.f * g.oh * g.ow;
    let plane = g.oh * g.ow;
    let k = kernel.data();

    // Per-sample partial gradients, reduced afterwards in index order.
    let partials = par::map_range(b, |i| {
        let xp = g.padded(&input.data()[i * per_in..(i + 1) * per_in]);
        let go = &grad_out.data()[i * per_out..(i + 1) * per_out];
        let mut gk = vec![0.0; k.len()];
        let mut gb = vec![0.0; g.f];
        let mut gxp = if need_input_grad { vec![0.0; g.c * g.hp * g.wp] } else { Vec::new() };
        for f in 0..g.f {
            let gof = &go[f * plane..(f + 1) * plane];
            gb[f] = gof.iter().sum();
            for c in 0..g.c {
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let idx = ((f * g.c + c) * g.kh + ki) * g.kw + kj;
                        let wv = k[idx];
                        let mut acc = 0.0;
                        for r in 0..g.oh {
                            let off = (c * g.hp + r + ki) * g.wp + kj;
                            let gr = &gof[r * g.ow..(r + 1) * g.ow];
                            acc += dot(gr, &xp[off..off + g.ow]);
                            if need_input_grad {
                                axpy(&mut gxp[off..off + g.ow], wv, gr);
                            }
                        }
                        gk[idx] = acc;
                    }
                }
            }
        }
        let gx = if need_input_grad {
            let mut gx = vec![0.0; per_in];
            g.unpadded(&gxp, &mut gx);
            gx
        } else {
            Vec::new()
        };
        (gx, gk, gb)
    });

    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.f];
    let mut gx = Vec::with_capacity(if need_input_grad { b * per_in } else { 0 });
    for (px, pk, pb) in partials {
        gk.iter_mut().zip(&pk).for_each(|(a, v)| *a += v);
        gb.iter_mut().zip(&pb).for_each(|(a, v)| *a += v);
        gx.extend_from_slice(&px);
    }
    let input_grad =
        if need_input_grad { Tensor::new(input.shape().to_vec(), gx)? } else { Tensor::zeros(input.shape()) };
    Ok(ConvGrads { input: input_grad, kernel: gk, bias: gb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop evaluation with explicit zero padding checks.
    fn naive(x: &Tensor, k: &Tensor, bias: &Tensor, padding: Padding) -> Tensor {
        let [b, c, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
        let [f, _, kh, kw] = <[usize; 4]>::try_from(k.shape()).unwrap();
        let (pt, pb) = padding.amounts(kh);
        let (pl, pr) = padding.amounts(kw);
        let oh = h + pt + pb - kh + 1;
        let ow = w + pl + pr - kw + 1;
        let mut out = vec![0.0; b * f * oh * ow];
        for bi in 0..b {
            for fi in 0..f {
                for r in 0..oh {
                    for s in 0..ow {
                        let mut acc = bias.data()[fi];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let y = r as isize + i as isize - pt as isize;
                                    let xx = s as isize + j as isize - pl as isize;
                                    if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((bi * c + ci) * h + y as usize) * w + xx as usize];
                                    acc += xv * k.data()[((fi * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((bi * f + fi) * oh + r) * ow + s] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![b, f, oh, ow], out).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![5.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &k, &b, Padding::Valid).unwrap().data(), &[5.0]);
    }

    #[test]
    fn ones_valid() {
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let k = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &k, &b, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 8, 8], &mut rng);
        let k = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        for padding in [Padding::Valid, Padding::Same] {
            let fast = conv2d_forward(&x, &k, &b, padding).unwrap();
            let slow = naive(&x, &k, &b, padding);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() <= 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(matches!(conv2d_forward(&x, &k, &b, Padding::Valid), Err(Error::Dimension(_))));
    }

    #[test]
    fn same_padding_even_kernel_keeps_extent() {
        assert_eq!(Padding::Same.output_extent(7, 4), Some(7));
        assert_eq!(Padding::Valid.output_extent(7, 4), Some(4));
        assert_eq!(Padding::Valid.output_extent(2, 3), None);
    }
}
