//! Straight-line `f64` reference implementations used as test oracles.
#![allow(dead_code)]

use ofa_core::arch::ArchSpec;
use ofa_core::supernet::{BnView, SubnetView};
use ofa_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, random_vec(rng, n, -1.0, 1.0)).unwrap()
}

pub fn to64(t: &[f32]) -> Vec<f64> {
    t.iter().map(|&v| v as f64).collect()
}

/// `x: N,C,H,W`, `k: O,C/g,KH,KW`. Returns `(out, [N,O,OH,OW])`.
#[allow(clippy::too_many_arguments)]
pub fn conv(
    x: &[f64],
    xs: [usize; 4],
    k: &[f64],
    ks: [usize; 4],
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = xs;
    let [o, cg, kh, kw] = ks;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let og = o / groups;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            let g = oc / og;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = 0.0;
                    for ic in 0..cg {
                        let ci = g * cg + ic;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += x[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k[((oc * cg + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    (out, [n, o, oh, ow])
}

/// Train-mode batch norm with biased variance.
pub fn bn_train(x: &[f64], xs: [usize; 4], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let [n, c, h, w] = xs;
    let hw = h * w;
    let cnt = (n * hw) as f64;
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let mut m = 0.0;
        for b in 0..n {
            for i in 0..hw {
                m += x[(b * c + ch) * hw + i];
            }
        }
        m /= cnt;
        let mut v = 0.0;
        for b in 0..n {
            for i in 0..hw {
                let d = x[(b * c + ch) * hw + i] - m;
                v += d * d;
            }
        }
        v /= cnt;
        let inv = 1.0 / (v + eps).sqrt();
        for b in 0..n {
            for i in 0..hw {
                let j = (b * c + ch) * hw + i;
                y[j] = gamma[ch] * (x[j] - m) * inv + beta[ch];
            }
        }
    }
    y
}

pub fn relu(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

pub fn pool(x: &[f64], xs: [usize; 4]) -> Vec<f64> {
    let hw = xs[2] * xs[3];
    x.chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect()
}

/// `x: N,In`, `w: Out,In`.
pub fn dense(x: &[f64], n: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    let inp = x.len() / n;
    let mut y = vec![0.0; n * out];
    for i in 0..n {
        for o in 0..out {
            let mut s = b[o];
            for j in 0..inp {
                s += x[i * inp + j] * w[o * inp + j];
            }
            y[i * out + o] = s;
        }
    }
    y
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &[f64], labels: &[usize]) -> f64 {
    let k = logits.len() / labels.len();
    let mut total = 0.0;
    for (row, &y) in logits.chunks(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// Centre crop of every `kk x kk` plane to `s x s`.
pub fn crop(k: &[f64], h: usize, kk: usize, s: usize) -> Vec<f64> {
    let off = (kk - s) / 2;
    let mut out = Vec::with_capacity(h * s * s);
    for c in 0..h {
        for y in 0..s {
            for x in 0..s {
                out.push(k[c * kk * kk + (y + off) * kk + x + off]);
            }
        }
    }
    out
}

/// Crop-then-transform chain, one plain matrix-vector product per channel.
pub fn derive_kernel(full: &[f64], h: usize, kmax: usize, k: usize, chain: &[(usize, Vec<f64>)]) -> Vec<f64> {
    let mut cur = full.to_vec();
    let mut size = kmax;
    for (s, t) in chain {
        if size == k {
            break;
        }
        let c = crop(&cur, h, size, *s);
        let n = s * s;
        let mut next = vec![0.0; h * n];
        for ch in 0..h {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += t[i * n + j] * c[ch * n + j];
                }
                next[ch * n + i] = acc;
            }
        }
        cur = next;
        size = *s;
    }
    assert_eq!(size, k, "chain does not reach {k}");
    cur
}

/// Weights of a subnet in `f64`, laid out as in [`SubnetView`].
#[derive(Clone)]
pub struct Weights {
    pub stem: Vec<f64>,
    pub stem_bn: (Vec<f64>, Vec<f64>),
    pub layers: Vec<LayerWeights>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

#[derive(Clone)]
pub struct LayerWeights {
    pub expand: Vec<f64>,
    pub bn1: (Vec<f64>, Vec<f64>),
    pub depthwise: Vec<f64>,
    pub bn2: (Vec<f64>, Vec<f64>),
    pub project: Vec<f64>,
    pub bn3: (Vec<f64>, Vec<f64>),
}

impl Weights {
    pub fn from_view(v: &SubnetView) -> Self {
        let bn = |b: &BnView| (to64(&b.gamma), to64(&b.beta));
        Weights {
            stem: to64(v.stem.data()),
            stem_bn: bn(&v.stem_bn),
            layers: v
                .layers
                .iter()
                .map(|l| LayerWeights {
                    expand: to64(l.expand.data()),
                    bn1: bn(&l.expand_bn),
                    depthwise: to64(l.depthwise.data()),
                    bn2: bn(&l.depthwise_bn),
                    project: to64(l.project.data()),
                    bn3: bn(&l.project_bn),
                })
                .collect(),
            fc_w: to64(v.classifier_weight.data()),
            fc_b: to64(v.classifier_bias.data()),
        }
    }
}

/// Train-mode forward of a subnet without dropout, returning logits.
pub fn subnet_logits(view: &SubnetView, w: &Weights, x: &[f64], n: usize) -> Vec<f64> {
    subnet_forward(view, w, x, n).0
}

fn relu_tracked(x: &mut [f64], pattern: &mut Vec<bool>) {
    pattern.extend(x.iter().map(|&v| v > 0.0));
    relu(x);
}

/// Logits plus the sign pattern of every ReLU input.
pub fn subnet_forward(view: &SubnetView, w: &Weights, x: &[f64], n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut pattern = Vec::new();
    let a: &ArchSpec = &view.arch;
    let eps = view.stem_bn.eps as f64;
    let (h0, w0) = a.input_hw;
    let (mut h, mut s) = conv(
        x,
        [n, a.in_channels, h0, w0],
        &w.stem,
        [a.stem_channels, a.in_channels, a.stem_kernel, a.stem_kernel],
        1,
        a.stem_padding,
        1,
    );
    h = bn_train(&h, s, &w.stem_bn.0, &w.stem_bn.1, eps);
    relu_tracked(&mut h, &mut pattern);
    for (l, lw) in view.layers.iter().zip(&w.layers) {
        let slot = l.slot;
        let hid = l.hidden;
        let k = l.kernel_size;
        let input = h.clone();
        let (mut t, ts) = conv(&h, s, &lw.expand, [hid, slot.in_channels, 1, 1], 1, 0, 1);
        t = bn_train(&t, ts, &lw.bn1.0, &lw.bn1.1, eps);
        relu_tracked(&mut t, &mut pattern);
        let (mut u, us) = conv(&t, ts, &lw.depthwise, [hid, 1, k, k], slot.stride, k / 2, hid);
        u = bn_train(&u, us, &lw.bn2.0, &lw.bn2.1, eps);
        relu_tracked(&mut u, &mut pattern);
        let (mut o, os) = conv(&u, us, &lw.project, [slot.out_channels, hid, 1, 1], 1, 0, 1);
        o = bn_train(&o, os, &lw.bn3.0, &lw.bn3.1, eps);
        if slot.residual() {
            for (v, i) in o.iter_mut().zip(&input) {
                *v += i;
            }
        }
        h = o;
        s = os;
    }
    let p = pool(&h, s);
    (dense(&p, n, &w.fc_w, &w.fc_b), pattern)
}

/// A small architecture that keeps full-network oracles fast.
pub fn tiny_arch() -> ArchSpec {
    ArchSpec {
        num_blocks: 2,
        max_depth: 2,
        in_channels: 2,
        stem_channels: 3,
        stem_kernel: 3,
        stem_padding: 1,
        block_out_channels: vec![4, 4],
        block_strides: vec![2, 1],
        num_classes: 5,
        input_hw: (8, 8),
        kernel_choices: vec![3, 5, 7],
        width_choices: vec![1, 2],
        depth_choices: vec![1, 2],
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub mod suites;
