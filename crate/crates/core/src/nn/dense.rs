use crate::error::{Error, Result};
use crate::nn::Tensor;

/// `[B, D] x [D, K] + b[K]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [b, d] = <[usize; 2]>::try_from(input.shape())
        .map_err(|_| Error::Dimension(format!("dense expects [B, D], got {:?}", input.shape())))?;
    let [wd, k] = <[usize; 2]>::try_from(weight.shape())
        .map_err(|_| Error::Dimension(format!("dense weight must be 2-d, got {:?}", weight.shape())))?;
    if wd != d || bias.len() != k {
        return Err(Error::Dimension(format!(
            "dense input dim {d} vs weight {:?}, bias {}",
            weight.shape(),
            bias.len()
        )));
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(b * k);
    for row in input.data().chunks(d) {
        let mut acc = bias.data().to_vec();
        for (i, &x) in row.iter().enumerate() {
            acc.iter_mut().zip(&w[i * k..(i + 1) * k]).for_each(|(a, wv)| *a += x * wv);
        }
        out.extend_from_slice(&acc);
    }
    Tensor::new(vec![b, k], out)
}

/// Returns (input grad, weight grad, bias grad).
pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let [b, d] = <[usize; 2]>::try_from(input.shape())
        .map_err(|_| Error::Dimension("dense backward expects 2-d input".into()))?;
    let k = weight.shape()[1];
    if grad_out.shape() != [b, k] {
        return Err(Error::Dimension("dense upstream gradient shape mismatch".into()));
    }
    let w = weight.data();
    let mut gw = vec![0.0; d * k];
    let mut gb = vec![0.0; k];
    let mut gx = vec![0.0; b * d];
    for bi in 0..b {
        let x = &input.data()[bi * d..(bi + 1) * d];
        let g = &grad_out.data()[bi * k..(bi + 1) * k];
        gb.iter_mut().zip(g).for_each(|(a, v)| *a += v);
        for i in 0..d {
            let row = &mut gw[i * k..(i + 1) * k];
            row.iter_mut().zip(g).for_each(|(a, v)| *a += x[i] * v);
            gx[bi * d + i] = w[i * k..(i + 1) * k].iter().zip(g).map(|(a, v)| a * v).sum();
        }
    }
    Ok((Tensor::new(vec![b, d], gx)?, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passthrough() {
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let y = dense_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn hand_matmul() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let (b, d, k) = (3, 5, 4);
        let x = Tensor::new(vec![b, d], (0..b * d).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let w = Tensor::new(vec![d, k], (0..d * k).map(|i| (i as f64 * 0.91).cos()).collect()).unwrap();
        let bias = Tensor::new(vec![k], vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let y = dense_forward(&x, &w, &bias).unwrap();
        for bi in 0..b {
            for kj in 0..k {
                let mut acc = bias.data()[kj];
                for i in 0..d {
                    acc += x.data()[bi * d + i] * w.data()[i * k + kj];
                }
                assert!((y.data()[bi * k + kj] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(matches!(dense_forward(&x, &w, &Tensor::zeros(&[2])), Err(Error::Dimension(_))));
    }
}
