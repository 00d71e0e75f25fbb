//! Randomised check suites shared by the per-crate tests and the acceptance run.

use ofa_core::arch::SubnetConfig;
use ofa_core::ops::{
    bn_backward, bn_forward_train, conv2d_backward, conv2d_forward, dense_backward,
    dropout_backward, global_avg_pool_backward, relu_backward, softmax_cross_entropy,
};
use ofa_core::supernet::derive_kernel_backward;
use ofa_core::{build_supernet, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub const FD_EPS: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub cases: usize,
    pub checks: usize,
    /// Coordinates skipped because a ReLU input changed sign inside `±eps`.
    pub kinked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl Report {
    fn record(&mut self, what: &str, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric, FD_FLOOR);
        if e > FD_TOL && std::env::var_os("FD_VERBOSE").is_some() {
            eprintln!("{what}: analytic {analytic:.6e} numeric {numeric:.6e}");
        }
        self.checks += 1;
        if e > self.worst || self.worst_at.is_empty() {
            self.worst = e;
            self.worst_at = format!("{what}: analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }

    fn merge(&mut self, other: Report) {
        self.cases += other.cases;
        self.checks += other.checks;
        self.kinked += other.kinked;
        if other.worst > self.worst || self.worst_at.is_empty() {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
    }
}

/// Central difference of `f` with respect to `x[i]`.
fn central(x: &mut [f64], i: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let v = x[i];
    x[i] = v + FD_EPS;
    let up = f(x);
    x[i] = v - FD_EPS;
    let down = f(x);
    x[i] = v;
    (up - down) / (2.0 * FD_EPS)
}

fn coords(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    (0..k).map(|_| rng.random_range(0..len)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy)]
enum ConvKind {
    General,
    Pointwise,
    Depthwise,
}

fn conv_case(rng: &mut ChaCha8Rng, kind: ConvKind, report: &mut Report) {
    let n = rng.random_range(1..=2);
    let (c, o, groups, k) = match kind {
        ConvKind::General => {
            let groups = [1, 1, 2][rng.random_range(0..3)];
            let c = groups * rng.random_range(1..=3);
            let o = groups * rng.random_range(1..=3);
            (c, o, groups, [1, 3, 5][rng.random_range(0..3)])
        }
        ConvKind::Pointwise => (rng.random_range(1..=5), rng.random_range(1..=5), 1, 1),
        ConvKind::Depthwise => {
            let c = rng.random_range(2..=6);
            (c, c, c, [3, 5, 7][rng.random_range(0..3)])
        }
    };
    let stride = rng.random_range(1..=2);
    let pad = match kind {
        ConvKind::Pointwise => 0,
        _ => rng.random_range(0..=k / 2),
    };
    let h = rng.random_range(k.max(3)..=k + 4);
    let w = rng.random_range(k.max(3)..=k + 4);
    let xs = [n, c, h, w];
    let ks = [o, c / groups, k, k];
    let x = random_tensor(rng, &xs);
    let kt = random_tensor(rng, &ks);
    let y = conv2d_forward(&x, &kt, stride, pad, groups).unwrap();
    let r = random_tensor(rng, y.shape());
    let (gx, gk) = conv2d_backward(&x, &kt, &r, stride, pad, groups).unwrap();
    let r64 = to64(r.data());
    let (mut x64, mut k64) = (to64(x.data()), to64(kt.data()));
    let kc = k64.clone();
    for i in coords(rng, x64.len(), 6) {
        let num = central(&mut x64, i, &mut |xv| dot(&conv(xv, xs, &kc, ks, stride, pad, groups).0, &r64));
        report.record(&format!("{kind:?} conv input {xs:?} {ks:?} s{stride} p{pad}"), gx.data()[i] as f64, num);
    }
    let xc = x64.clone();
    for i in coords(rng, k64.len(), 6) {
        let num = central(&mut k64, i, &mut |kv| dot(&conv(&xc, xs, kv, ks, stride, pad, groups).0, &r64));
        report.record(&format!("{kind:?} conv kernel {xs:?} {ks:?} s{stride} p{pad}"), gk.data()[i] as f64, num);
    }
    report.cases += 1;
}

fn bn_case(rng: &mut ChaCha8Rng, report: &mut Report) {
    let xs = [
        rng.random_range(2..=4),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    ];
    let x = {
        let mut t = random_tensor(rng, &xs);
        let shift: f32 = rng.random_range(-2.0..2.0);
        t.data_mut().iter_mut().for_each(|v| *v = *v * 1.5 + shift);
        t
    };
    let c = xs[1];
    let gamma = random_vec(rng, c, 0.5, 1.5);
    let beta = random_vec(rng, c, -0.5, 0.5);
    let eps = 1e-5;
    let (_, cache, _) = bn_forward_train(&x, &gamma, &beta, eps).unwrap();
    let r = random_tensor(rng, &xs);
    let (gx, dg, db) = bn_backward(&r, &cache, &gamma).unwrap();
    let r64 = to64(r.data());
    let (mut x64, mut g64, mut b64) = (to64(x.data()), to64(&gamma), to64(&beta));
    let (gc, bc) = (g64.clone(), b64.clone());
    for i in coords(rng, x64.len(), 6) {
        let num = central(&mut x64, i, &mut |xv| dot(&bn_train(xv, xs, &gc, &bc, eps as f64), &r64));
        report.record(&format!("bn input {xs:?}"), gx.data()[i] as f64, num);
    }
    let xc = x64.clone();
    for i in 0..c {
        let num = central(&mut g64, i, &mut |gv| dot(&bn_train(&xc, xs, gv, &bc, eps as f64), &r64));
        report.record(&format!("bn gamma {xs:?}"), dg[i] as f64, num);
    }
    let gc = g64.clone();
    for i in 0..c {
        let num = central(&mut b64, i, &mut |bv| dot(&bn_train(&xc, xs, &gc, bv, eps as f64), &r64));
        report.record(&format!("bn beta {xs:?}"), db[i] as f64, num);
    }
    report.cases += 1;
}

fn dense_case(rng: &mut ChaCha8Rng, report: &mut Report) {
    let (n, inp, out) = (rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=6));
    let x = random_tensor(rng, &[n, inp]);
    let w = random_tensor(rng, &[out, inp]);
    let b = random_tensor(rng, &[out]);
    let r = random_tensor(rng, &[n, out]);
    let (gx, gw, gb) = dense_backward(&r, &x, &w).unwrap();
    let r64 = to64(r.data());
    let (mut x64, mut w64, mut b64) = (to64(x.data()), to64(w.data()), to64(b.data()));
    let (wc, bc) = (w64.clone(), b64.clone());
    for i in coords(rng, x64.len(), 5) {
        let num = central(&mut x64, i, &mut |xv| dot(&dense(xv, n, &wc, &bc), &r64));
        report.record("dense input", gx.data()[i] as f64, num);
    }
    let xc = x64.clone();
    for i in coords(rng, w64.len(), 5) {
        let num = central(&mut w64, i, &mut |wv| dot(&dense(&xc, n, wv, &bc), &r64));
        report.record("dense weight", gw.data()[i] as f64, num);
    }
    let wc = w64.clone();
    for i in 0..out {
        let num = central(&mut b64, i, &mut |bv| dot(&dense(&xc, n, &wc, bv), &r64));
        report.record("dense bias", gb.data()[i] as f64, num);
    }
    report.cases += 1;
}

fn pool_case(rng: &mut ChaCha8Rng, report: &mut Report) {
    let xs = [rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=5)];
    let r = random_tensor(rng, &[xs[0], xs[1]]);
    let gx = global_avg_pool_backward(&r, &xs).unwrap();
    let r64 = to64(r.data());
    let mut x64 = to64(random_tensor(rng, &xs).data());
    for i in coords(rng, x64.len(), 6) {
        let num = central(&mut x64, i, &mut |xv| dot(&pool(xv, xs), &r64));
        report.record("pool", gx.data()[i] as f64, num);
    }
    report.cases += 1;
}

fn ce_case(rng: &mut ChaCha8Rng, report: &mut Report) {
    let (n, k) = (rng.random_range(1..=5), rng.random_range(2..=12));
    let mut logits = random_tensor(rng, &[n, k]);
    logits.data_mut().iter_mut().for_each(|v| *v *= 4.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let mut z = to64(logits.data());
    for i in coords(rng, z.len(), 8) {
        let num = central(&mut z, i, &mut |zv| cross_entropy(zv, &labels));
        report.record("cross-entropy", g.data()[i] as f64, num);
    }
    report.cases += 1;
}

fn relu_case(rng: &mut ChaCha8Rng, report: &mut Report) {
    let len = rng.random_range(4..=20);
    // Keep inputs clear of the kink so the central difference is exact.
    let x: Vec<f32> = (0..len)
        .map(|_| {
            let v: f32 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    let xt = Tensor::from_vec(&[len], x.clone()).unwrap();
    let y = ofa_core::ops::relu(&xt);
    let r = random_tensor(rng, &[len]);
    let g = relu_backward(&r, &y);
    let r64 = to64(r.data());
    let mut x64 = to64(&x);
    for i in 0..len {
        let num = central(&mut x64, i, &mut |xv| {
            let mut y = xv.to_vec();
            relu(&mut y);
            dot(&y, &r64)
        });
        report.record("relu", g.data()[i] as f64, num);
    }
    report.cases += 1;
}

fn dropout_case(rng: &mut ChaCha8Rng, report: &mut Report) {
    let len = rng.random_range(4..=30);
    let keep = 1.0 / 0.75;
    let mask: Vec<f32> = (0..len).map(|_| if rng.random_bool(0.25) { 0.0 } else { keep }).collect();
    let mt = Tensor::from_vec(&[len], mask.clone()).unwrap();
    let r = random_tensor(rng, &[len]);
    let g = dropout_backward(&r, Some(&mt));
    let r64 = to64(r.data());
    let m64 = to64(&mask);
    let mut x64 = to64(random_tensor(rng, &[len]).data());
    for i in 0..len {
        let num = central(&mut x64, i, &mut |xv| xv.iter().zip(&m64).zip(&r64).map(|((x, m), r)| x * m * r).sum());
        report.record("dropout", g.data()[i] as f64, num);
    }
    report.cases += 1;
}

fn kernel_case(rng: &mut ChaCha8Rng, report: &mut Report) {
    let h = rng.random_range(1..=4);
    let k = [3, 5][rng.random_range(0..2)];
    let full = random_tensor(rng, &[h, 1, 7, 7]);
    let t5 = {
        let mut t = Tensor::identity(25);
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        t
    };
    let t3 = {
        let mut t = Tensor::identity(9);
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        t
    };
    let chain = [(5, &t5), (3, &t3)];
    let (out, trace) = ofa_core::supernet::derive_kernel(&full, k, &chain).unwrap();
    let r = random_tensor(rng, out.shape());
    let mut gfull = vec![0.0f32; full.len()];
    let mut g5 = vec![0.0f32; 25 * 25];
    let mut g3 = vec![0.0f32; 81];
    derive_kernel_backward(&r, &trace, &chain, 7, &mut gfull, &mut [&mut g5, &mut g3]).unwrap();
    let r64 = to64(r.data());
    let mut f64s = to64(full.data());
    let mut chain64 = vec![(5usize, to64(t5.data())), (3usize, to64(t3.data()))];
    let cc = chain64.clone();
    for i in coords(rng, f64s.len(), 6) {
        let num = central(&mut f64s, i, &mut |fv| dot(&derive_kernel(fv, h, 7, k, &cc), &r64));
        report.record("kernel derivation full", gfull[i] as f64, num);
    }
    let fc = f64s.clone();
    let stages = if k == 5 { 1 } else { 2 };
    for s in 0..stages {
        let (len, analytic) = if s == 0 { (625, &g5) } else { (81, &g3) };
        for i in coords(rng, len, 6) {
            let mut t = chain64[s].1.clone();
            let num = central(&mut t, i, &mut |tv| {
                let mut c = chain64.clone();
                c[s].1 = tv.to_vec();
                dot(&derive_kernel(&fc, h, 7, k, &c), &r64)
            });
            report.record(&format!("kernel derivation transform{}", chain64[s].0), analytic[i] as f64, num);
        }
    }
    chain64.clear();
    report.cases += 1;
}

fn subnet_case(rng: &mut ChaCha8Rng, report: &mut Report) {
    let arch = tiny_arch();
    let mut net = build_supernet(&arch, rng.random()).unwrap().with_dropout(0.0).unwrap();
    // Non-trivial BN affine and transforms.
    for p in net.params_mut() {
        if p.value.shape().len() <= 2 {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
    }
    let cfg = SubnetConfig::sample(&arch, rng);
    let view = net.derive_subnet(&cfg).unwrap();
    let n = 4;
    let x = random_tensor(rng, &[n, arch.in_channels, arch.input_hw.0, arch.input_hw.1]);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..arch.num_classes)).collect();
    let (logits, tape) = view.forward_train(&x, rng).unwrap();
    let (_, gl) = softmax_cross_entropy(&logits, &labels).unwrap();
    let g = view.backward(&tape, &gl).unwrap();
    let w = Weights::from_view(&view);
    let x64 = to64(x.data());
    let eval = |w: &Weights| {
        let (logits, pattern) = subnet_forward(&view, w, &x64, n);
        (cross_entropy(&logits, &labels), pattern)
    };
    let mut check = |name: &str, get: &dyn Fn(&mut Weights) -> &mut Vec<f64>, analytic: &[f32], rng: &mut ChaCha8Rng| {
        let mut wm = w.clone();
        let len = get(&mut wm).len();
        for i in coords(rng, len, 3) {
            let base = get(&mut wm)[i];
            get(&mut wm)[i] = base + FD_EPS;
            let (up, pu) = eval(&wm);
            get(&mut wm)[i] = base - FD_EPS;
            let (down, pd) = eval(&wm);
            get(&mut wm)[i] = base;
            if pu != pd {
                report.kinked += 1;
                continue;
            }
            report.record(&format!("subnet {name}"), analytic[i] as f64, (up - down) / (2.0 * FD_EPS));
        }
    };
    check("stem", &|w| &mut w.stem, g.stem.data(), rng);
    check("stem bn gamma", &|w| &mut w.stem_bn.0, &g.stem_bn.gamma, rng);
    check("classifier weight", &|w| &mut w.fc_w, g.classifier_weight.data(), rng);
    check("classifier bias", &|w| &mut w.fc_b, g.classifier_bias.data(), rng);
    for (li, lg) in g.layers.iter().enumerate() {
        check("expand", &|w| &mut w.layers[li].expand, lg.expand.data(), rng);
        check("depthwise", &|w| &mut w.layers[li].depthwise, lg.depthwise.data(), rng);
        check("project", &|w| &mut w.layers[li].project, lg.project.data(), rng);
        check("depthwise bn beta", &|w| &mut w.layers[li].bn2.1, &lg.depthwise_bn.beta, rng);
        check("project bn gamma", &|w| &mut w.layers[li].bn3.0, &lg.project_bn.gamma, rng);
    }
    report.cases += 1;
}

/// Finite-difference checks of every layer against `f64` oracles.
pub fn gradient_suite(seed: u64) -> Report {
    let mut total = Report::default();
    let mut rng = rng(seed);
    let mut run = |count: usize, f: &mut dyn FnMut(&mut ChaCha8Rng, &mut Report)| {
        let mut r = Report::default();
        for _ in 0..count {
            f(&mut rng, &mut r);
        }
        total.merge(r);
    };
    run(50, &mut |g, r| conv_case(g, ConvKind::General, r));
    run(20, &mut |g, r| conv_case(g, ConvKind::Pointwise, r));
    run(40, &mut |g, r| conv_case(g, ConvKind::Depthwise, r));
    run(30, &mut bn_case);
    run(15, &mut dense_case);
    run(10, &mut pool_case);
    run(20, &mut ce_case);
    run(10, &mut relu_case);
    run(10, &mut dropout_case);
    run(20, &mut kernel_case);
    run(15, &mut subnet_case);
    total
}

/// Forward conv against the naive loop, all three kernel paths.
pub fn conv_oracle_suite(seed: u64, cases: usize) -> (usize, f64) {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..cases {
        let kind = [ConvKind::General, ConvKind::Pointwise, ConvKind::Depthwise][i % 3];
        let n = rng.random_range(1..=3);
        let (c, o, groups, k) = match kind {
            ConvKind::General => {
                let groups = [1, 2, 3][rng.random_range(0..3)];
                (groups * rng.random_range(1..=4), groups * rng.random_range(1..=4), groups, [1, 3, 5, 7][rng.random_range(0..4)])
            }
            ConvKind::Pointwise => (rng.random_range(1..=24), rng.random_range(1..=24), 1, 1),
            ConvKind::Depthwise => {
                let c = rng.random_range(1..=40);
                (c, c, c, [3, 5, 7][rng.random_range(0..3)])
            }
        };
        let stride = rng.random_range(1..=2);
        let pad = if k == 1 { 0 } else { rng.random_range(0..=k / 2) };
        let h = rng.random_range(k..=k + 30);
        let w = rng.random_range(k..=k + 30);
        let x = random_tensor(&mut rng, &[n, c, h, w]);
        let kt = random_tensor(&mut rng, &[o, c / groups, k, k]);
        let y = conv2d_forward(&x, &kt, stride, pad, groups).unwrap();
        let (want, shape) = conv(&to64(x.data()), [n, c, h, w], &to64(kt.data()), [o, c / groups, k, k], stride, pad, groups);
        assert_eq!(y.shape(), shape);
        for (a, b) in y.data().iter().zip(&want) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    (cases, worst)
}

/// Walks the network from the `ArchSpec` fields alone and counts every
/// multiply-accumulate of the stem, the active layers and the classifier.
pub fn oracle_macs(cfg: &SubnetConfig, a: &ofa_core::ArchSpec) -> u64 {
    let mut h = a.input_hw.0 + 2 * a.stem_padding + 1 - a.stem_kernel;
    let mut w = a.input_hw.1 + 2 * a.stem_padding + 1 - a.stem_kernel;
    let k2 = (a.stem_kernel * a.stem_kernel) as u64;
    let mut total = (h * w * a.stem_channels * a.in_channels) as u64 * k2;
    let mut c = a.stem_channels;
    for b in 0..a.num_blocks {
        for pos in 0..cfg.depth[b] {
            let layer = b * a.max_depth + pos;
            let s = if pos == 0 { a.block_strides[b] } else { 1 };
            let hidden = cfg.width[layer] * c;
            let k = cfg.kernel[layer];
            // Expand runs at input resolution.
            total += (h * w * hidden * c) as u64;
            let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
            total += (oh * ow * hidden * k * k) as u64;
            total += (oh * ow * a.block_out_channels[b] * hidden) as u64;
            h = oh;
            w = ow;
            c = a.block_out_channels[b];
        }
    }
    total + (c * a.num_classes) as u64
}

/// One forward/backward of `cfg` on random data, folded into the supernet's
/// gradient buffers and running statistics.
pub fn gradients_for(net: &mut ofa_core::SupernetParams, cfg: &SubnetConfig, seed: u64) {
    let arch = net.arch.clone();
    let view = net.derive_subnet(cfg).unwrap();
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[2, arch.in_channels, arch.input_hw.0, arch.input_hw.1]);
    let labels: Vec<usize> = (0..2).map(|_| r.random_range(0..arch.num_classes)).collect();
    let (logits, tape) = view.forward_train(&x, &mut r).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = view.backward(&tape, &g).unwrap();
    net.zero_grads();
    net.accumulate_grads(&view, &grads).unwrap();
    net.update_running_stats(&view, &tape.stats).unwrap();
}

/// Everything outside the slices `cfg` uses must receive exactly zero
/// gradient and keep its running statistics.
pub fn isolation_holds(arch: &ofa_core::ArchSpec, cfg: &SubnetConfig, seed: u64) -> Result<(), String> {
    let mut net = build_supernet(arch, seed).unwrap();
    let before = net.clone();
    gradients_for(&mut net, cfg, seed);
    let zero = |s: &[f32]| s.iter().all(|&v| v == 0.0);
    for (i, l) in net.layers.iter().enumerate() {
        let old = &before.layers[i];
        let s = l.slot;
        if !cfg.is_active(arch, i) {
            let all = [&l.expand.grad, &l.depthwise.grad, &l.project.grad];
            if !all.iter().all(|t| zero(t.data())) || !l.transforms.iter().all(|(_, p)| zero(p.grad.data())) {
                return Err(format!("inactive layer {i} received gradient"));
            }
            if l.expand_bn.running_mean != old.expand_bn.running_mean {
                return Err(format!("inactive layer {i} running stats moved"));
            }
            continue;
        }
        let h = cfg.width[i] * s.in_channels;
        let kk = s.max_kernel;
        if !zero(&l.expand.grad.data()[h * s.in_channels..]) {
            return Err(format!("layer {i} expand rows beyond {h}"));
        }
        if !zero(&l.depthwise.grad.data()[h * kk * kk..]) {
            return Err(format!("layer {i} depthwise channels beyond {h}"));
        }
        let k = cfg.kernel[i];
        // Kernels below 5 are derived from the 5x5 centre.
        let ring = (kk - k.max(5).min(kk)) / 2;
        for c in 0..h {
            for y in 0..kk {
                for x in 0..kk {
                    let inside = y >= ring && y < kk - ring && x >= ring && x < kk - ring;
                    if !inside && l.depthwise.grad.data()[(c * kk + y) * kk + x] != 0.0 {
                        return Err(format!("layer {i} depthwise outside the used crop"));
                    }
                }
            }
        }
        for (size, p) in &l.transforms {
            if (*size < k || k == kk) && !zero(p.grad.data()) {
                return Err(format!("layer {i} unused transform {size} received gradient"));
            }
        }
        for o in 0..s.out_channels {
            if !zero(&l.project.grad.data()[o * s.max_hidden + h..(o + 1) * s.max_hidden]) {
                return Err(format!("layer {i} project columns beyond {h}"));
            }
        }
        for bn in [&l.expand_bn, &l.depthwise_bn] {
            if !zero(&bn.gamma.grad.data()[h..]) || !zero(&bn.beta.grad.data()[h..]) {
                return Err(format!("layer {i} bn beyond {h}"));
            }
        }
        if l.expand_bn.running_mean[h..] != old.expand_bn.running_mean[h..]
            || l.depthwise_bn.running_var[h..] != old.depthwise_bn.running_var[h..]
        {
            return Err(format!("layer {i} running stats beyond {h} moved"));
        }
    }
    Ok(())
}

/// All-max identity, identity-transform crops and gradient isolation over
/// `configs` random subnets. Returns the number of subnets checked.
pub fn weight_sharing_suite(seed: u64, configs: usize) -> Result<usize, String> {
    use ofa_core::supernet::{center_crop, derive_kernel};
    use ofa_core::ArchSpec;
    for arch in [ArchSpec::grayscale28(), ArchSpec::cifar(10), tiny_arch()] {
        let net = build_supernet(&arch, seed).unwrap();
        let view = net.derive_subnet(&SubnetConfig::all_max(&arch)).unwrap();
        let same = view.stem == net.stem.value
            && view.classifier_weight == net.classifier_weight.value
            && view.classifier_bias == net.classifier_bias.value
            && view.layers.len() == net.layers.len()
            && view.layers.iter().zip(&net.layers).all(|(v, l)| {
                v.expand == l.expand.value
                    && v.depthwise == l.depthwise.value
                    && v.project == l.project.value
                    && v.expand_bn.gamma == l.expand_bn.gamma.value.data()
                    && v.depthwise_bn.mean == l.depthwise_bn.running_mean
                    && v.project_bn.var == l.project_bn.running_var
            });
        if !same {
            return Err("all-max view differs from the supernet".into());
        }
        for k in [5, 3] {
            let cfg = SubnetConfig::uniform(&arch, k, *arch.width_choices.last().unwrap(), arch.max_depth);
            let v = net.derive_subnet(&cfg).unwrap();
            for (lv, l) in v.layers.iter().zip(&net.layers) {
                if lv.depthwise != center_crop(&l.depthwise.value, k).unwrap() {
                    return Err(format!("identity transform at k={k} is not a centre crop"));
                }
            }
        }
    }
    let mut r = rng(seed);
    let full = random_tensor(&mut r, &[4, 1, 7, 7]);
    let (t5, t3) = (Tensor::identity(25), Tensor::identity(9));
    for k in [5, 3] {
        let (got, _) = derive_kernel(&full, k, &[(5, &t5), (3, &t3)]).unwrap();
        if got != center_crop(&full, k).unwrap() {
            return Err(format!("identity chain at k={k} is not a centre crop"));
        }
    }
    let mut checked = 0;
    for arch in [ArchSpec::grayscale28(), tiny_arch()] {
        isolation_holds(&arch, &SubnetConfig::all_min(&arch), seed)?;
        isolation_holds(&arch, &SubnetConfig::middle(&arch), seed + 1)?;
        checked += 2;
        for i in 0..configs / 2 {
            let cfg = SubnetConfig::sample(&arch, &mut r);
            isolation_holds(&arch, &cfg, seed + 2 + i as u64)?;
            checked += 1;
        }
    }
    Ok(checked)
}

/// MAC counter against [`oracle_macs`] on `configs` random subnets per
/// architecture, then `draws` binned samples per default bin.
pub fn flop_suite(seed: u64, configs: usize, draws: usize) -> Result<String, String> {
    use ofa_core::eval::{sample_in_bin, width_lock, DEFAULT_BINS, DEFAULT_TOL};
    use ofa_core::rng::{stream, Stream};
    use ofa_core::{count_macs, mflops, ArchSpec};
    let mut r = rng(seed);
    for arch in [ArchSpec::grayscale28(), ArchSpec::cifar(10)] {
        for _ in 0..configs {
            let cfg = SubnetConfig::sample(&arch, &mut r);
            let (got, want) = (count_macs(&cfg, &arch).unwrap(), oracle_macs(&cfg, &arch));
            if got != want {
                return Err(format!("count_macs {got} vs oracle {want} for {cfg:?}"));
            }
        }
    }
    let arch = ArchSpec::grayscale28();
    for (b, &target) in DEFAULT_BINS.iter().enumerate() {
        let lock = width_lock(&arch, target);
        if lock.is_some() != (target == 4.0 || target == 14.0) {
            return Err(format!("width lock misapplied at {target}"));
        }
        for i in 0..draws {
            let mut rs = stream(seed, Stream::Eval, &[b as u64, i as u64]);
            let cfg = sample_in_bin(&arch, target, DEFAULT_TOL, &mut rs, 10_000)
                .map_err(|e| format!("bin {target}: {e}"))?;
            let m = mflops(count_macs(&cfg, &arch).unwrap());
            if (m - target).abs() > DEFAULT_TOL {
                return Err(format!("bin {target} sampled {m}"));
            }
            if let Some(w) = lock {
                if cfg.width.iter().any(|&x| x != w) {
                    return Err(format!("bin {target} broke the width lock"));
                }
            }
        }
    }
    Ok(format!("{} configs exact, {} bins x {draws} draws", 2 * configs, DEFAULT_BINS.len()))
}

/// Simulates every method's schedule on every dataset budget without training.
pub fn schedule_suite(seed: u64) -> Result<String, String> {
    use ofa_core::data::DatasetId;
    use ofa_core::schemes::{epoch_budget, next_subnets, Method, Phase, SchemeState};
    use ofa_core::ArchSpec;
    let expected = [
        (DatasetId::Mnist, 10, 27),
        (DatasetId::FashionMnist, 25, 57),
        (DatasetId::Cifar10, 180, 410),
    ];
    let mut steps = 0usize;
    for (id, s, p) in expected {
        let b = epoch_budget(id);
        if (b.supernet, b.shrinking, b.rss_short, b.rss) != (s, p, s, s + p) {
            return Err(format!("{id} budget {b:?}"));
        }
        let arch = ArchSpec::for_dataset(id);
        let (min, mid, max) = (
            SubnetConfig::all_min(&arch),
            SubnetConfig::middle(&arch),
            SubnetConfig::all_max(&arch),
        );
        for m in Method::ALL {
            let total = m.epochs(id);
            let want_total = match m {
                Method::RssShort => s,
                _ => s + p,
            };
            if total != want_total {
                return Err(format!("{m} on {id}: {total} epochs"));
            }
            let spec = m.scheme(id);
            let mut state = SchemeState::new(&spec, &arch, seed, total).map_err(|e| e.to_string())?;
            for e in 0..total {
                state.begin_epoch(&spec, e).map_err(|e| e.to_string())?;
                let mut first: Option<SubnetConfig> = None;
                for _ in 0..3 {
                    let subs = next_subnets(&spec, &mut state).map_err(|e| e.to_string())?;
                    steps += 1;
                    let per = match (m, spec.kind.phase(e)) {
                        (Method::OfaPs, Some(Phase::Depth)) => 2,
                        (Method::OfaPs, Some(Phase::Width)) => 4,
                        (Method::RssPerBatch2, _) => 2,
                        _ => 1,
                    };
                    if subs.len() != per {
                        return Err(format!("{m} epoch {e}: {} subnets per step", subs.len()));
                    }
                    for c in &subs {
                        let fixed = match m {
                            Method::SmallestOnly => Some(&min),
                            Method::MiddleOnly => Some(&mid),
                            Method::LargestOnly => Some(&max),
                            Method::MaxThenMin => Some(if e < total / 2 { &max } else { &min }),
                            Method::MinThenMax => Some(if e < total / 2 { &min } else { &max }),
                            Method::Alternating => Some(if e % 2 == 0 { &min } else { &max }),
                            _ => None,
                        };
                        if fixed.is_some_and(|f| f != c) {
                            return Err(format!("{m} epoch {e}: unexpected subnet"));
                        }
                        if m == Method::OfaPs {
                            let ok = match spec.kind.phase(e).unwrap() {
                                Phase::Supernet => c == &max,
                                Phase::Kernel => c.width == max.width && c.depth == max.depth,
                                Phase::Depth => c.width == max.width,
                                Phase::Width => true,
                            };
                            if !ok {
                                return Err(format!("shrinking epoch {e}: subnet outside its phase"));
                            }
                        }
                        if matches!(m, Method::Rss | Method::RssShort) {
                            if first.get_or_insert_with(|| c.clone()) != c {
                                return Err(format!("{m} epoch {e}: subnet changed within the epoch"));
                            }
                        }
                        c.validate(&arch).map_err(|e| e.to_string())?;
                    }
                }
            }
        }
    }
    Ok(format!("{steps} simulated steps"))
}
