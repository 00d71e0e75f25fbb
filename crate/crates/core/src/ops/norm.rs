//! Batch normalisation over the `N,H,W` axes of an `N,C,H,W` tensor.
//!
//! The functional kernels take per-channel slices so the supernet can normalise
//! only the first `c` channels of a wider layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::reduce;
use crate::{Error, Param, Result, Tensor};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel mean and (biased) variance of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Saved by a train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Tensor::full(&[channels], 1.0), true),
            beta: Param::new(Tensor::zeros(&[channels]), true),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Normalises the first `input.dim(1)` channels. Train mode also folds the
    /// batch statistics into the running estimates.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<BnCache>)> {
        let c = input.dim(1);
        if c > self.channels() {
            return Err(Error::shape(format!(
                "batchnorm has {} channels, input has {c}",
                self.channels()
            )));
        }
        match mode {
            Mode::Train => {
                let (y, cache, stats) = bn_forward_train(
                    input,
                    &self.gamma.value.data()[..c],
                    &self.beta.value.data()[..c],
                    self.eps,
                )?;
                update_running(
                    &mut self.running_mean[..c],
                    &mut self.running_var[..c],
                    &stats,
                    self.momentum,
                );
                Ok((y, Some(cache)))
            }
            Mode::Eval => {
                let y = bn_forward_eval(
                    input,
                    &self.gamma.value.data()[..c],
                    &self.beta.value.data()[..c],
                    &self.running_mean[..c],
                    &self.running_var[..c],
                    self.eps,
                )?;
                Ok((y, None))
            }
        }
    }
}

/// `running <- (1 - m) * running + m * batch`.
pub fn update_running(mean: &mut [f32], var: &mut [f32], stats: &BatchStats, momentum: f32) {
    for (r, &b) in mean.iter_mut().zip(&stats.mean) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
    for (r, &b) in var.iter_mut().zip(&stats.var) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
}

fn check_bn_input(x: &Tensor, gamma: &[f32], beta: &[f32]) -> Result<(usize, usize, usize)> {
    if x.shape().len() < 2 {
        return Err(Error::shape("batchnorm input needs at least 2 dims"));
    }
    let n = x.dim(0);
    let c = x.dim(1);
    if n == 0 {
        return Err(Error::Empty("batchnorm batch"));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "batchnorm affine has {} channels, input has {c}",
            gamma.len()
        )));
    }
    let spatial = x.len() / (n * c);
    Ok((n, c, spatial))
}

pub fn batch_stats(x: &Tensor) -> Result<BatchStats> {
    if x.shape().len() < 2 || x.dim(0) == 0 {
        return Err(Error::Empty("batchnorm batch"));
    }
    let (n, c) = (x.dim(0), x.dim(1));
    let spatial = x.len() / (n * c);
    let count = (n * spatial) as f64;
    let data = x.data();
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut total = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * spatial;
            total += reduce::sum(&data[off..off + spatial]);
        }
        let m = total / count;
        let mut sq = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * spatial;
            sq += reduce::sum_sq_dev(&data[off..off + spatial], m as f32);
        }
        mean[ch] = m as f32;
        var[ch] = (sq / count) as f32;
    }
    Ok(BatchStats { mean, var })
}

pub fn bn_forward_train(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> Result<(Tensor, BnCache, BatchStats)> {
    let (n, c, spatial) = check_bn_input(x, gamma, beta)?;
    let stats = batch_stats(x)?;
    let inv_std: Vec<f32> = stats
        .var
        .iter()
        .map(|&v| 1.0 / libm::sqrtf(v + eps))
        .collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let (xd, xh, yd) = (x.data(), xhat.data_mut(), y.data_mut());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * spatial;
            let (m, is, g, bt) = (stats.mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in off..off + spatial {
                let h = (xd[i] - m) * is;
                xh[i] = h;
                yd[i] = g * h + bt;
            }
        }
    }
    y.debug_check("batchnorm forward")?;
    Ok((y, BnCache { xhat, inv_std }, stats))
}

pub fn bn_forward_eval(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let (n, c, spatial) = check_bn_input(x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::shape("batchnorm running stats channel mismatch"));
    }
    let mut y = Tensor::zeros(x.shape());
    let (xd, yd) = (x.data(), y.data_mut());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * spatial;
            let scale = gamma[ch] / libm::sqrtf(var[ch] + eps);
            let shift = beta[ch] - mean[ch] * scale;
            for i in off..off + spatial {
                yd[i] = xd[i] * scale + shift;
            }
        }
    }
    y.debug_check("batchnorm eval")?;
    Ok(y)
}

/// Train-mode backward. Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn bn_backward(gy: &Tensor, cache: &BnCache, gamma: &[f32]) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    if gy.shape() != cache.xhat.shape() {
        return Err(Error::shape("batchnorm backward shape mismatch"));
    }
    let (n, c) = (gy.dim(0), gy.dim(1));
    let spatial = gy.len() / (n * c);
    let count = (n * spatial) as f32;
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    let (g, xh) = (gy.data(), cache.xhat.data());
    for ch in 0..c {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for b in 0..n {
            let off = (b * c + ch) * spatial;
            sg += reduce::sum(&g[off..off + spatial]);
            sgx += reduce::dot(&g[off..off + spatial], &xh[off..off + spatial]);
        }
        dbeta[ch] = sg as f32;
        dgamma[ch] = sgx as f32;
    }
    let mut gx = Tensor::zeros(gy.shape());
    let gxd = gx.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * spatial;
            let k = gamma[ch] * cache.inv_std[ch] / count;
            let (mb, mgx) = (dbeta[ch], dgamma[ch]);
            for i in off..off + spatial {
                gxd[i] = k * (count * g[i] - mb - xh[i] * mgx);
            }
        }
    }
    gx.debug_check("batchnorm backward")?;
    Ok((gx, dgamma, dbeta))
}
