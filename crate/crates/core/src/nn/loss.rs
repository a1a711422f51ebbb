use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Tensor};

/// Class-weighted categorical cross-entropy on raw logits.
///
/// Returns the batch-mean loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &Tensor, class_weights: &[f64]) -> Result<(f64, Tensor)> {
    if logits.ndim() != 2 || logits.shape() != targets.shape() {
        return Err(Error::Dimension(format!(
            "logits {:?} and targets {:?} must be equal [B, K]",
            logits.shape(),
            targets.shape()
        )));
    }
    let k = logits.shape()[1];
    let labels = targets
        .data()
        .chunks(k)
        .enumerate()
        .map(|(row, t)| {
            let ones = t.iter().filter(|&&v| v == 1.0).count();
            let zeros = t.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != k - 1 {
                return Err(Error::Input(format!("target row {row} is not one-hot: {t:?}")));
            }
            Ok(t.iter().position(|&v| v == 1.0).unwrap())
        })
        .collect::<Result<Vec<_>>>()?;
    cross_entropy_with_labels(logits, &labels, class_weights)
}

/// Same as [`softmax_cross_entropy`] with integer class labels.
pub fn cross_entropy_with_labels(logits: &Tensor, labels: &[usize], class_weights: &[f64]) -> Result<(f64, Tensor)> {
    let [b, k] = <[usize; 2]>::try_from(logits.shape())
        .map_err(|_| Error::Dimension(format!("logits must be [B, K], got {:?}", logits.shape())))?;
    if labels.len() != b {
        return Err(Error::Dimension(format!("{} labels for batch of {b}", labels.len())));
    }
    if class_weights.len() != k || class_weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Argument(format!("class weights must be {k} positive values, got {class_weights:?}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax_rows(logits)?;
    let mut loss = 0.0;
    let mut grad = probs.data().to_vec();
    let inv_b = 1.0 / b as f64;
    for (i, &y) in labels.iter().enumerate() {
        let w = class_weights[y];
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        loss += w * (lse - row[y]);
        let g = &mut grad[i * k..(i + 1) * k];
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= w * inv_b);
    }
    Ok((loss * inv_b, Tensor::new(vec![b, k], grad)?))
}

pub fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len().max(1), k]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * k + l] = 1.0;
    }
    t
}
