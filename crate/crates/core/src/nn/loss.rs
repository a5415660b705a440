use super::layers::softmax_row;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Mean cross-entropy of `B×C` logits against class indices, with its
/// gradient `(softmax − onehot)/B`.
pub fn cross_entropy<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<(F, Tensor<F>)> {
    let (b, c) = logits.as_matrix();
    if labels.len() != b {
        return Err(Error::shape(format!("{b} logit rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {bad} outside [0, {c})")));
    }
    let inv_b = F::one() / F::of(b as f64);
    let mut grad = logits.data().to_vec();
    let mut loss = F::zero();
    for (row, &label) in grad.chunks_exact_mut(c).zip(labels) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<F>().ln();
        loss += lse - row[label];
        softmax_row(row);
        row[label] -= F::one();
        row.iter_mut().for_each(|g| *g *= inv_b);
    }
    Ok((loss * inv_b, Tensor::from_vec(logits.shape(), grad)?))
}

/// Mean squared error and its gradient `2(pred − target)/count`.
pub fn mse<F: Real>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let inv = F::one() / F::of(pred.len() as f64);
    let two = F::of(2.0);
    let mut loss = F::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            two * d * inv
        })
        .collect();
    Ok((loss * inv, Tensor::from_vec(pred.shape(), grad)?))
}
