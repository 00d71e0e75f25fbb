use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::gemm::{gemm, Layout};
use super::reduce;
use super::Mode;
use crate::{Error, Result, Tensor};

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient of ReLU given its forward output.
pub fn relu_backward(grad_out: &Tensor, output: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    relu_backward_in_place(&mut g, output);
    g
}

pub fn relu_backward_in_place(grad: &mut Tensor, output: &Tensor) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `N,C,H,W -> N,C`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    if input.shape().len() != 4 {
        return Err(Error::shape("global_avg_pool expects a 4-d input"));
    }
    let (n, c) = (input.dim(0), input.dim(1));
    let hw = input.dim(2) * input.dim(3);
    if hw == 0 {
        return Err(Error::Empty("global_avg_pool spatial extent"));
    }
    let data = input.data();
    let out: Vec<f32> = (0..n * c)
        .map(|i| {
            let s = reduce::sum(&data[i * hw..(i + 1) * hw]);
            (s / hw as f64) as f32
        })
        .collect();
    Tensor::from_vec(&[n, c], out)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let hw = input_shape[2] * input_shape[3];
    let mut g = Tensor::zeros(input_shape);
    let scale = 1.0 / hw as f32;
    for (i, &go) in grad_out.data().iter().enumerate() {
        g.data_mut()[i * hw..(i + 1) * hw].fill(go * scale);
    }
    Ok(g)
}

/// `x: N,In`, `weight: Out,In`, `bias: Out` -> `N,Out`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, inp) = (input.dim(0), input.dim(1));
    let out_dim = weight.dim(0);
    if weight.dim(1) != inp || bias.len() != out_dim || input.shape().len() != 2 {
        return Err(Error::shape(format!(
            "dense: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, out_dim]);
    for row in out.data_mut().chunks_mut(out_dim) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        n,
        inp,
        out_dim,
        input.data(),
        Layout::Normal,
        weight.data(),
        Layout::Transposed,
        1.0,
        out.data_mut(),
    );
    out.debug_check("dense")?;
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn dense_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, inp) = (input.dim(0), input.dim(1));
    let out_dim = weight.dim(0);
    if grad_out.shape() != [n, out_dim] {
        return Err(Error::shape("dense backward shape mismatch"));
    }
    let mut gx = Tensor::zeros(&[n, inp]);
    gemm(
        n,
        out_dim,
        inp,
        grad_out.data(),
        Layout::Normal,
        weight.data(),
        Layout::Normal,
        0.0,
        gx.data_mut(),
    );
    let mut gw = Tensor::zeros(&[out_dim, inp]);
    gemm(
        out_dim,
        n,
        inp,
        grad_out.data(),
        Layout::Transposed,
        input.data(),
        Layout::Normal,
        0.0,
        gw.data_mut(),
    );
    let mut gb = Tensor::zeros(&[out_dim]);
    for row in grad_out.data().chunks(out_dim) {
        for (b, &g) in gb.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((gx, gw, gb))
}

/// Inverted dropout. Returns the output and, in train mode with a non-zero
/// rate, the per-element scale mask (`0` or `1/(1-rate)`) for the backward pass.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f32,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Tensor::zeros(input.shape());
    for m in mask.data_mut() {
        *m = if rng.random::<f32>() < rate { 0.0 } else { keep };
    }
    let mut out = input.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        *o *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&Tensor>) -> Tensor {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        for (v, &m) in g.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
    }
    g
}
