//! 2-D cross-correlation with groups, and its analytic gradients.
//!
//! Three code paths share one contract: pointwise (1x1, stride 1, no padding,
//! dense) maps to one GEMM per image, depthwise runs a direct loop over a
//! channels-last copy and everything else goes through im2col + GEMM per group.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, Layout};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects 4-d input and kernel, got {input:?} and {kernel:?}"
            )));
        }
        if stride == 0 || groups == 0 {
            return Err(Error::config("conv2d stride and groups must be positive"));
        }
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (co, cig, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if c % groups != 0 || co % groups != 0 {
            return Err(Error::shape(format!(
                "channels in={c} out={co} not divisible by groups={groups}"
            )));
        }
        if cig != c / groups {
            return Err(Error::shape(format!(
                "kernel expects {cig} input channels per group, input provides {}",
                c / groups
            )));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw || kh == 0 || kw == 0 {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        Ok(ConvGeometry {
            batch: n,
            in_channels: c,
            in_h: h,
            in_w: w,
            out_channels: co,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            groups,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1
            && self.kernel_w == 1
            && self.stride == 1
            && self.padding == 0
            && self.groups == 1
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Multiply-accumulates of one forward pass over the whole batch.
    pub fn macs(&self) -> u64 {
        (self.batch
            * self.out_channels
            * (self.in_channels / self.groups)
            * self.kernel_h
            * self.kernel_w
            * self.out_h
            * self.out_w) as u64
    }
}

/// Output index range `[lo, hi)` for which `o * stride + k - pad` lands in `[0, len)`.
#[inline]
fn valid_range(len: usize, out_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding, groups)?;
    let mut out = Tensor::zeros(&g.output_shape());
    if g.is_pointwise() {
        pointwise_forward(&g, input.data(), kernel.data(), out.data_mut());
    } else if g.is_depthwise() {
        depthwise_forward(&g, input.data(), kernel.data(), out.data_mut());
    } else {
        general_forward(&g, input.data(), kernel.data(), out.data_mut());
    }
    out.debug_check("conv2d_forward")?;
    Ok(out)
}

/// Returns `(grad_input, grad_kernel)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<(Tensor, Tensor)> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding, groups)?;
    if grad_out.shape() != g.output_shape() {
        return Err(Error::shape(format!(
            "grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            g.output_shape()
        )));
    }
    let mut gin = Tensor::zeros(input.shape());
    let mut gk = Tensor::zeros(kernel.shape());
    if g.is_pointwise() {
        pointwise_backward(
            &g,
            input.data(),
            kernel.data(),
            grad_out.data(),
            gin.data_mut(),
            gk.data_mut(),
        );
    } else if g.is_depthwise() {
        depthwise_backward(
            &g,
            input.data(),
            kernel.data(),
            grad_out.data(),
            gin.data_mut(),
            gk.data_mut(),
        );
    } else {
        general_backward(
            &g,
            input.data(),
            kernel.data(),
            grad_out.data(),
            gin.data_mut(),
            gk.data_mut(),
        );
    }
    gin.debug_check("conv2d_backward grad_input")?;
    gk.debug_check("conv2d_backward grad_kernel")?;
    Ok((gin, gk))
}

fn pointwise_forward(g: &ConvGeometry, x: &[f32], w: &[f32], y: &mut [f32]) {
    let hw = g.in_h * g.in_w;
    let (ci, co) = (g.in_channels, g.out_channels);
    for n in 0..g.batch {
        gemm(
            co,
            ci,
            hw,
            w,
            Layout::Normal,
            &x[n * ci * hw..(n + 1) * ci * hw],
            Layout::Normal,
            0.0,
            &mut y[n * co * hw..(n + 1) * co * hw],
        );
    }
}

fn pointwise_backward(
    g: &ConvGeometry,
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    gx: &mut [f32],
    gw: &mut [f32],
) {
    let hw = g.in_h * g.in_w;
    let (ci, co) = (g.in_channels, g.out_channels);
    for n in 0..g.batch {
        let gy_n = &gy[n * co * hw..(n + 1) * co * hw];
        gemm(
            ci,
            co,
            hw,
            w,
            Layout::Transposed,
            gy_n,
            Layout::Normal,
            0.0,
            &mut gx[n * ci * hw..(n + 1) * ci * hw],
        );
        gemm(
            co,
            hw,
            ci,
            gy_n,
            Layout::Normal,
            &x[n * ci * hw..(n + 1) * ci * hw],
            Layout::Transposed,
            1.0,
            gw,
        );
    }
}

const TILE: usize = 32;

/// `C,H,W -> H,W,C` for one image, tiled over positions.
fn to_channels_last(src: &[f32], c: usize, hw: usize, dst: &mut [f32]) {
    for i0 in (0..hw).step_by(TILE) {
        let i1 = (i0 + TILE).min(hw);
        for ch in 0..c {
            let row = &src[ch * hw + i0..ch * hw + i1];
            for (k, &v) in row.iter().enumerate() {
                dst[(i0 + k) * c + ch] = v;
            }
        }
    }
}

fn from_channels_last(src: &[f32], c: usize, hw: usize, dst: &mut [f32]) {
    for i0 in (0..hw).step_by(TILE) {
        let i1 = (i0 + TILE).min(hw);
        for ch in 0..c {
            let row = &mut dst[ch * hw + i0..ch * hw + i1];
            for (k, d) in row.iter_mut().enumerate() {
                *d = src[(i0 + k) * c + ch];
            }
        }
    }
}

// Depthwise kernels work channels-last so the innermost loop runs over
// channels, which is contiguous for every stride and spatial size.
fn depthwise_forward(g: &ConvGeometry, x: &[f32], w: &[f32], y: &mut [f32]) {
    let (h, wd, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (kh, kw, s, p) = (g.kernel_h, g.kernel_w, g.stride, g.padding);
    let c = g.in_channels;
    let mut wt = vec![0.0f32; kh * kw * c];
    to_channels_last(w, c, kh * kw, &mut wt);
    let mut xt = vec![0.0f32; h * wd * c];
    let mut yt = vec![0.0f32; oh * ow * c];
    for n in 0..g.batch {
        to_channels_last(&x[n * c * h * wd..(n + 1) * c * h * wd], c, h * wd, &mut xt);
        yt.iter_mut().for_each(|v| *v = 0.0);
        for oy in 0..oh {
            for ky in 0..kh {
                let iy = (oy * s + ky) as isize - p as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for ox in 0..ow {
                    let out = &mut yt[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                    for kx in 0..kw {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let off = (iy as usize * wd + ix as usize) * c;
                        let inp = &xt[off..off + c];
                        let wk = &wt[(ky * kw + kx) * c..(ky * kw + kx + 1) * c];
                        for ((o, &a), &b) in out.iter_mut().zip(inp).zip(wk) {
                            *o += a * b;
                        }
                    }
                }
            }
        }
        from_channels_last(&yt, c, oh * ow, &mut y[n * c * oh * ow..(n + 1) * c * oh * ow]);
    }
}

fn depthwise_backward(
    g: &ConvGeometry,
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    gx: &mut [f32],
    gw: &mut [f32],
) {
    let (h, wd, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (kh, kw, s, p) = (g.kernel_h, g.kernel_w, g.stride, g.padding);
    let c = g.in_channels;
    let mut wt = vec![0.0f32; kh * kw * c];
    to_channels_last(w, c, kh * kw, &mut wt);
    let mut gwt = vec![0.0f32; kh * kw * c];
    let mut xt = vec![0.0f32; h * wd * c];
    let mut gxt = vec![0.0f32; h * wd * c];
    let mut gyt = vec![0.0f32; oh * ow * c];
    for n in 0..g.batch {
        to_channels_last(&x[n * c * h * wd..(n + 1) * c * h * wd], c, h * wd, &mut xt);
        to_channels_last(&gy[n * c * oh * ow..(n + 1) * c * oh * ow], c, oh * ow, &mut gyt);
        gxt.iter_mut().for_each(|v| *v = 0.0);
        for oy in 0..oh {
            for ky in 0..kh {
                let iy = (oy * s + ky) as isize - p as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for ox in 0..ow {
                    let go = &gyt[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                    for kx in 0..kw {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let off = (iy as usize * wd + ix as usize) * c;
                        let k = (ky * kw + kx) * c;
                        let inp = &xt[off..off + c];
                        let gin = &mut gxt[off..off + c];
                        let wk = &wt[k..k + c];
                        let gwk = &mut gwt[k..k + c];
                        for ((gi, gk), ((&wv, &xv), &gv)) in gin
                            .iter_mut()
                            .zip(gwk.iter_mut())
                            .zip(wk.iter().zip(inp).zip(go))
                        {
                            *gi += wv * gv;
                            *gk += xv * gv;
                        }
                    }
                }
            }
        }
        from_channels_last(&gxt, c, h * wd, &mut gx[n * c * h * wd..(n + 1) * c * h * wd]);
    }
    let mut back = vec![0.0f32; kh * kw * c];
    from_channels_last(&gwt, c, kh * kw, &mut back);
    for (d, v) in gw.iter_mut().zip(back) {
        *d += v;
    }
}

fn im2col(g: &ConvGeometry, x_group: &[f32], cg: usize, col: &mut [f32]) {
    let (h, wd, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (kh, kw, s, p) = (g.kernel_h, g.kernel_w, g.stride, g.padding);
    col.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..cg {
        let plane = &x_group[c * h * wd..(c + 1) * h * wd];
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(h, oh, ky, s, p);
            for kx in 0..kw {
                let (ox_lo, ox_hi) = valid_range(wd, ow, kx, s, p);
                let row = ((c * kh + ky) * kw + kx) * oh * ow;
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - p;
                    for ox in ox_lo..ox_hi {
                        col[row + oy * ow + ox] = plane[iy * wd + ox * s + kx - p];
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeometry, col: &[f32], cg: usize, gx_group: &mut [f32]) {
    let (h, wd, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (kh, kw, s, p) = (g.kernel_h, g.kernel_w, g.stride, g.padding);
    for c in 0..cg {
        let plane = &mut gx_group[c * h * wd..(c + 1) * h * wd];
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(h, oh, ky, s, p);
            for kx in 0..kw {
                let (ox_lo, ox_hi) = valid_range(wd, ow, kx, s, p);
                let row = ((c * kh + ky) * kw + kx) * oh * ow;
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - p;
                    for ox in ox_lo..ox_hi {
                        plane[iy * wd + ox * s + kx - p] += col[row + oy * ow + ox];
                    }
                }
            }
        }
    }
}

fn general_forward(g: &ConvGeometry, x: &[f32], w: &[f32], y: &mut [f32]) {
    let cg = g.in_channels / g.groups;
    let cog = g.out_channels / g.groups;
    let kk = cg * g.kernel_h * g.kernel_w;
    let ohw = g.out_h * g.out_w;
    let ihw = g.in_h * g.in_w;
    let mut col = vec![0.0f32; kk * ohw];
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let xg = &x[(n * g.in_channels + grp * cg) * ihw..(n * g.in_channels + (grp + 1) * cg) * ihw];
            im2col(g, xg, cg, &mut col);
            let wg = &w[grp * cog * kk..(grp + 1) * cog * kk];
            let yo = (n * g.out_channels + grp * cog) * ohw;
            gemm(
                cog,
                kk,
                ohw,
                wg,
                Layout::Normal,
                &col,
                Layout::Normal,
                0.0,
                &mut y[yo..yo + cog * ohw],
            );
        }
    }
}

fn general_backward(
    g: &ConvGeometry,
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    gx: &mut [f32],
    gw: &mut [f32],
) {
    let cg = g.in_channels / g.groups;
    let cog = g.out_channels / g.groups;
    let kk = cg * g.kernel_h * g.kernel_w;
    let ohw = g.out_h * g.out_w;
    let ihw = g.in_h * g.in_w;
    let mut col = vec![0.0f32; kk * ohw];
    let mut dcol: Vec<f32> = vec![0.0f32; kk * ohw];
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let xo = (n * g.in_channels + grp * cg) * ihw;
            im2col(g, &x[xo..xo + cg * ihw], cg, &mut col);
            let yo = (n * g.out_channels + grp * cog) * ohw;
            let gy_g = &gy[yo..yo + cog * ohw];
            let wg = &w[grp * cog * kk..(grp + 1) * cog * kk];
            gemm(
                cog,
                ohw,
                kk,
                gy_g,
                Layout::Normal,
                &col,
                Layout::Transposed,
                1.0,
                &mut gw[grp * cog * kk..(grp + 1) * cog * kk],
            );
            gemm(
                kk,
                cog,
                ohw,
                wg,
                Layout::Transposed,
                gy_g,
                Layout::Normal,
                0.0,
                &mut dcol,
            );
            col2im(g, &dcol, cg, &mut gx[xo..xo + cg * ihw]);
        }
    }
}
