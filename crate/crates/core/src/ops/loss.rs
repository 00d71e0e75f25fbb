use alloc::format;

use crate::{Error, Result, Tensor};

/// Batch-mean softmax cross-entropy. Returns the loss and its gradient with
/// respect to the logits, `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(Error::shape("cross-entropy expects N,K logits"));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    if n == 0 || labels.is_empty() {
        return Err(Error::Empty("cross-entropy batch"));
    }
    if labels.len() != n {
        return Err(Error::shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0f64;
    let inv_n = 1.0 / n as f32;
    for (i, (row, grow)) in logits
        .data()
        .chunks(k)
        .zip(grad.data_mut().chunks_mut(k))
        .enumerate()
    {
        let y = labels[i];
        if y >= k {
            return Err(Error::Config(format!("label {y} outside [0, {k})")));
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (g, &z) in grow.iter_mut().zip(row) {
            let e = libm::expf(z - max);
            *g = e;
            sum += e;
        }
        let log_sum = libm::logf(sum);
        total += (log_sum - (row[y] - max)) as f64;
        for g in grow.iter_mut() {
            *g = *g / sum * inv_n;
        }
        grow[y] -= inv_n;
    }
    let loss = (total / n as f64) as f32;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("cross-entropy loss is {loss}")));
    }
    Ok((loss, grad))
}
