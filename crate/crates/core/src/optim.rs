use serde::{Deserialize, Serialize};

use crate::{Error, Param, Result};

pub const DEFAULT_MOMENTUM: f32 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f32 = 3e-5;
pub const DEFAULT_BASE_LR: f32 = 0.01;

/// SGD with heavy-ball momentum and L2 weight decay.
///
/// `buf <- momentum * buf + (grad + wd * value)` (decay skipped for exempt
/// params), `value <- value - lr * buf`, then the gradient is cleared.
pub fn sgd_step<'a>(
    params: impl IntoIterator<Item = &'a mut Param>,
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) {
    for p in params {
        let wd = if p.decay_exempt { 0.0 } else { weight_decay };
        let value = p.value.data_mut();
        let grad = p.grad.data_mut();
        let buf = p.momentum.data_mut();
        for ((v, g), b) in value.iter_mut().zip(grad.iter_mut()).zip(buf.iter_mut()) {
            let d = if wd != 0.0 { *g + wd * *v } else { *g };
            *b = momentum * *b + d;
            if lr != 0.0 {
                *v -= lr * *b;
            }
            *g = 0.0;
        }
    }
}

/// `0.5 * base_lr * (1 + cos(pi * epoch / total_epochs))`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f32) -> Result<f32> {
    if total_epochs == 0 {
        return Err(Error::config("cosine schedule needs total_epochs > 0"));
    }
    if epoch > total_epochs {
        return Err(Error::config("epoch beyond the cosine schedule"));
    }
    let t = epoch as f64 / total_epochs as f64;
    let lr = 0.5 * base_lr as f64 * (1.0 + libm::cos(core::f64::consts::PI * t));
    Ok(lr.max(0.0) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrPolicy {
    Cosine,
    Constant,
}

impl LrPolicy {
    pub fn lr(self, epoch: usize, total_epochs: usize, base_lr: f32) -> Result<f32> {
        match self {
            LrPolicy::Cosine => cosine_lr(epoch, total_epochs, base_lr),
            LrPolicy::Constant => Ok(base_lr),
        }
    }
}
