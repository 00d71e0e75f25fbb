//! Elastic kernel size: a smaller depthwise kernel is the centre crop of the
//! next larger one, passed through a learned `k^2 x k^2` transform that is
//! shared by all channels of the layer.

use alloc::format;
use alloc::vec::Vec;

use crate::ops::gemm::{gemm, Layout};
use crate::{Error, Result, Tensor};

/// Centre `size x size` crop of every channel of an `H,1,K,K` kernel, flattened
/// to `H x size^2`.
pub fn center_crop(kernel: &Tensor, size: usize) -> Result<Tensor> {
    let (h, k) = (kernel.dim(0), kernel.dim(2));
    if size > k || (k - size) % 2 != 0 {
        return Err(Error::shape(format!("cannot centre-crop {k}x{k} to {size}x{size}")));
    }
    let off = (k - size) / 2;
    let mut out = Vec::with_capacity(h * size * size);
    for c in 0..h {
        let plane = &kernel.data()[c * k * k..(c + 1) * k * k];
        for y in 0..size {
            let row = (y + off) * k + off;
            out.extend_from_slice(&plane[row..row + size]);
        }
    }
    Tensor::from_vec(&[h, 1, size, size], out)
}

/// Adds an `H,1,s,s` gradient into the centre of an `H,1,K,K` buffer.
fn add_center(dst: &mut [f32], k: usize, src: &Tensor) {
    let (h, s) = (src.dim(0), src.dim(2));
    let off = (k - s) / 2;
    for c in 0..h {
        for y in 0..s {
            for x in 0..s {
                dst[c * k * k + (y + off) * k + x + off] += src.data()[(c * s + y) * s + x];
            }
        }
    }
}

/// Intermediate crops kept for the backward pass, one per transform applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelTrace {
    crops: Vec<Tensor>,
}

impl KernelTrace {
    pub fn stages(&self) -> usize {
        self.crops.len()
    }
}

/// Derives a `k x k` kernel from `full` (`H,1,K,K`).
///
/// `chain` lists the transforms in decreasing kernel size, e.g.
/// `[(5, &t5), (3, &t3)]` for a 7x7 store. Each stage crops the current kernel
/// to the stage size and maps every flattened channel `v` to `T v`.
pub fn derive_kernel(full: &Tensor, k: usize, chain: &[(usize, &Tensor)]) -> Result<(Tensor, KernelTrace)> {
    let max = full.dim(2);
    let mut trace = KernelTrace::default();
    if k == max {
        return Ok((full.clone(), trace));
    }
    if !chain.iter().any(|&(s, _)| s == k) {
        return Err(Error::Config(format!(
            "kernel size {k} is not an elastic choice below {max}"
        )));
    }
    let h = full.dim(0);
    let mut current = full.clone();
    for &(size, t) in chain {
        if t.shape() != [size * size, size * size] {
            return Err(Error::shape(format!(
                "transform for {size}x{size} has shape {:?}",
                t.shape()
            )));
        }
        let crop = center_crop(&current, size)?;
        let mut out = Tensor::zeros(&[h, 1, size, size]);
        let n = size * size;
        gemm(h, n, n, crop.data(), Layout::Normal, t.data(), Layout::Transposed, 0.0, out.data_mut());
        trace.crops.push(crop);
        current = out;
        if size == k {
            return Ok((current, trace));
        }
    }
    unreachable!("chain contains k")
}

/// Backward of [`derive_kernel`]. Adds into `grad_full` (`H,1,K,K`, may be a
/// prefix slice of a wider store) and into the transform gradients of the
/// stages that were used.
pub fn derive_kernel_backward(
    grad: &Tensor,
    trace: &KernelTrace,
    chain: &[(usize, &Tensor)],
    full_size: usize,
    grad_full: &mut [f32],
    grad_transforms: &mut [&mut [f32]],
) -> Result<()> {
    let h = grad.dim(0);
    if grad_full.len() < h * full_size * full_size {
        return Err(Error::shape("kernel gradient buffer too small"));
    }
    if trace.stages() == 0 {
        for (d, &g) in grad_full.iter_mut().zip(grad.data()) {
            *d += g;
        }
        return Ok(());
    }
    let mut g_cur = grad.clone();
    for stage in (0..trace.stages()).rev() {
        let (size, t) = chain[stage];
        let n = size * size;
        let crop = &trace.crops[stage];
        gemm(n, h, n, g_cur.data(), Layout::Transposed, crop.data(), Layout::Normal, 1.0, grad_transforms[stage]);
        let mut g_crop = Tensor::zeros(&[h, 1, size, size]);
        gemm(h, n, n, g_cur.data(), Layout::Normal, t.data(), Layout::Normal, 0.0, g_crop.data_mut());
        let parent = if stage == 0 { full_size } else { chain[stage - 1].0 };
        if stage == 0 {
            add_center(grad_full, parent, &g_crop);
        } else {
            let mut g_parent = Tensor::zeros(&[h, 1, parent, parent]);
            add_center(g_parent.data_mut(), parent, &g_crop);
            g_cur = g_parent;
            continue;
        }
    }
    Ok(())
}
