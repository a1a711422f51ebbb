use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::par;

/// Output of a max-pool forward pass together with the winning input offsets.
pub struct PoolOutput {
    pub output: Tensor,
    /// Per output element, the flat index of the selected input element.
    pub argmax: Vec<usize>,
}

pub fn pooled_extent(n: usize, p: usize) -> usize {
    n.div_ceil(p)
}

/// Non-overlapping max pooling. Trailing partial windows behave as if padded with -inf.
pub fn maxpool2d_forward(input: &Tensor, pool: (usize, usize)) -> Result<PoolOutput> {
    let (ph, pw) = pool;
    if ph == 0 || pw == 0 {
        return Err(Error::Argument(format!("pool size must be positive, got {ph}x{pw}")));
    }
    let [b, c, h, w] = <[usize; 4]>::try_from(input.shape())
        .map_err(|_| Error::Dimension(format!("maxpool2d expects 4-d input, got {:?}", input.shape())))?;
    let (oh, ow) = (pooled_extent(h, ph), pooled_extent(w, pw));
    let planes = b * c;
    let per_out = oh * ow;
    let x = input.data();

    let mut packed = vec![(0.0f64, 0usize); planes * per_out];
    par::for_each_chunk_mut(&mut packed, per_out, |p, dst| {
        let base = p * h * w;
        for r in 0..oh {
            for s in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut at = usize::MAX;
                for i in r * ph..((r + 1) * ph).min(h) {
                    for j in s * pw..((s + 1) * pw).min(w) {
                        let idx = base + i * w + j;
                        if at == usize::MAX || x[idx] > best {
                            best = x[idx];
                            at = idx;
                        }
                    }
                }
                dst[r * ow + s] = (best, at);
            }
        }
    });
    let (data, argmax): (Vec<f64>, Vec<usize>) = packed.into_iter().unzip();
    Ok(PoolOutput { output: Tensor::new(vec![b, c, oh, ow], data)?, argmax })
}

/// Routes each upstream gradient to the argmax position of its window.
pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Dimension("maxpool upstream gradient size mismatch".into()));
    }
    let mut gx = vec![0.0; input_shape.iter().product()];
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gx[idx] += g;
    }
    Tensor::new(input_shape.to_vec(), gx)
}
