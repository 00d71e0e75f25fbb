//! Derived subnet weights and the forward/backward pass over them.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::kernel::{derive_kernel, KernelTrace};
use super::SupernetParams;
use crate::arch::{ArchSpec, LayerSlot};
use crate::ops::{
    bn_backward, bn_forward_eval, bn_forward_train, conv2d_backward, conv2d_forward, dense,
    dense_backward, dropout, dropout_backward, global_avg_pool, global_avg_pool_backward,
    relu_backward_in_place, relu_in_place, BatchNorm, BatchStats, BnCache, Mode,
};
use crate::{Error, Result, SubnetConfig, Tensor};

/// BN parameters and running statistics restricted to the active channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BnView {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BnView {
    fn slice(bn: &BatchNorm, c: usize) -> Self {
        BnView {
            gamma: bn.gamma.value.data()[..c].to_vec(),
            beta: bn.beta.value.data()[..c].to_vec(),
            mean: bn.running_mean[..c].to_vec(),
            var: bn.running_var[..c].to_vec(),
            eps: bn.eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerView {
    pub slot: LayerSlot,
    pub kernel_size: usize,
    pub hidden: usize,
    pub expand: Tensor,
    pub expand_bn: BnView,
    pub depthwise: Tensor,
    pub depthwise_bn: BnView,
    pub project: Tensor,
    pub project_bn: BnView,
    pub(crate) trace: KernelTrace,
}

/// Weights of one subnet, copied out of the supernet.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetView {
    pub config: SubnetConfig,
    pub arch: ArchSpec,
    pub stem: Tensor,
    pub stem_bn: BnView,
    /// Active layers only, in network order.
    pub layers: Vec<LayerView>,
    pub classifier_weight: Tensor,
    pub classifier_bias: Tensor,
    pub dropout: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub expand: Tensor,
    pub expand_bn: BnGrads,
    /// Gradient of the derived `k x k` kernel.
    pub depthwise: Tensor,
    pub depthwise_bn: BnGrads,
    pub project: Tensor,
    pub project_bn: BnGrads,
}

/// Gradients with respect to the view's tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrads {
    pub stem: Tensor,
    pub stem_bn: BnGrads,
    pub layers: Vec<LayerGrads>,
    pub classifier_weight: Tensor,
    pub classifier_bias: Tensor,
}

struct LayerTape {
    input: Tensor,
    bn1: BnCache,
    r1: Tensor,
    bn2: BnCache,
    r2: Tensor,
    bn3: BnCache,
}

/// Activations saved by a training forward pass.
pub struct Tape {
    input: Tensor,
    stem_bn: BnCache,
    stem_out: Tensor,
    layers: Vec<LayerTape>,
    pool_shape: Vec<usize>,
    mask: Option<Tensor>,
    features: Tensor,
    /// Batch statistics of every BN unit, stem first, then three per layer.
    pub stats: Vec<BatchStats>,
}

pub(super) fn derive(net: &SupernetParams, cfg: &SubnetConfig) -> Result<SubnetView> {
    let arch = &net.arch;
    cfg.validate(arch)?;
    let mut layers = Vec::new();
    for (i, l) in net.layers.iter().enumerate() {
        if !cfg.is_active(arch, i) {
            continue;
        }
        let s = l.slot;
        let (cin, cout) = (s.in_channels, s.out_channels);
        let h = cfg.width[i] * cin;
        let k = cfg.kernel[i];
        let kmax = s.max_kernel;
        let expand = Tensor::from_vec(&[h, cin, 1, 1], l.expand.value.data()[..h * cin].to_vec())?;
        let full = Tensor::from_vec(
            &[h, 1, kmax, kmax],
            l.depthwise.value.data()[..h * kmax * kmax].to_vec(),
        )?;
        let chain: Vec<(usize, &Tensor)> = l.transforms.iter().map(|(s, p)| (*s, &p.value)).collect();
        let (depthwise, trace) = derive_kernel(&full, k, &chain)?;
        let mut project = Vec::with_capacity(cout * h);
        for o in 0..cout {
            project.extend_from_slice(&l.project.value.data()[o * s.max_hidden..o * s.max_hidden + h]);
        }
        layers.push(LayerView {
            slot: s,
            kernel_size: k,
            hidden: h,
            expand,
            expand_bn: BnView::slice(&l.expand_bn, h),
            depthwise,
            depthwise_bn: BnView::slice(&l.depthwise_bn, h),
            project: Tensor::from_vec(&[cout, h, 1, 1], project)?,
            project_bn: BnView::slice(&l.project_bn, cout),
            trace,
        });
    }
    Ok(SubnetView {
        config: cfg.clone(),
        arch: arch.clone(),
        stem: net.stem.value.clone(),
        stem_bn: BnView::slice(&net.stem_bn, arch.stem_channels),
        layers,
        classifier_weight: net.classifier_weight.value.clone(),
        classifier_bias: net.classifier_bias.value.clone(),
        dropout: net.dropout,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pass {
    Train,
    Eval,
    Statistics,
}

struct Recorder {
    pass: Pass,
    caches: Vec<BnCache>,
    stats: Vec<BatchStats>,
}

impl Recorder {
    fn bn(&mut self, x: &Tensor, bn: &BnView) -> Result<Tensor> {
        match self.pass {
            Pass::Eval => bn_forward_eval(x, &bn.gamma, &bn.beta, &bn.mean, &bn.var, bn.eps),
            Pass::Train | Pass::Statistics => {
                let (y, cache, st) = bn_forward_train(x, &bn.gamma, &bn.beta, bn.eps)?;
                if self.pass == Pass::Train {
                    self.caches.push(cache);
                }
                self.stats.push(st);
                Ok(y)
            }
        }
    }

    fn take_cache(&mut self) -> BnCache {
        self.caches.pop().expect("cache recorded")
    }
}

impl SubnetView {
    fn check_input(&self, x: &Tensor) -> Result<()> {
        let a = &self.arch;
        if x.shape().len() != 4
            || x.dim(1) != a.in_channels
            || (x.dim(2), x.dim(3)) != a.input_hw
        {
            return Err(Error::shape(format!(
                "input {:?} incompatible with the network (expects N,{},{},{})",
                x.shape(),
                a.in_channels,
                a.input_hw.0,
                a.input_hw.1
            )));
        }
        if x.dim(0) == 0 {
            return Err(Error::Empty("input batch"));
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        pass: Pass,
        rng: Option<&mut R>,
    ) -> Result<(Option<Tensor>, Option<Tape>, Vec<BatchStats>)> {
        self.check_input(x)?;
        let train = pass == Pass::Train;
        let mut rec = Recorder {
            pass,
            caches: Vec::new(),
            stats: Vec::new(),
        };
        let a = &self.arch;
        let mut h = conv2d_forward(x, &self.stem, 1, a.stem_padding, 1)?;
        h = rec.bn(&h, &self.stem_bn)?;
        relu_in_place(&mut h);
        let stem_bn = if train { Some(rec.take_cache()) } else { None };
        let stem_out = if train { Some(h.clone()) } else { None };
        let mut tapes = Vec::new();
        for l in &self.layers {
            let input = h;
            let a1 = conv2d_forward(&input, &l.expand, 1, 0, 1)?;
            let mut r1 = rec.bn(&a1, &l.expand_bn)?;
            drop(a1);
            relu_in_place(&mut r1);
            let a2 = conv2d_forward(&r1, &l.depthwise, l.slot.stride, l.kernel_size / 2, l.hidden)?;
            let mut r2 = rec.bn(&a2, &l.depthwise_bn)?;
            drop(a2);
            relu_in_place(&mut r2);
            let a3 = conv2d_forward(&r2, &l.project, 1, 0, 1)?;
            let mut out = rec.bn(&a3, &l.project_bn)?;
            drop(a3);
            if l.slot.residual() {
                for (o, &i) in out.data_mut().iter_mut().zip(input.data()) {
                    *o += i;
                }
            }
            if train {
                let bn3 = rec.take_cache();
                let bn2 = rec.take_cache();
                let bn1 = rec.take_cache();
                tapes.push(LayerTape {
                    input,
                    bn1,
                    r1,
                    bn2,
                    r2,
                    bn3,
                });
            }
            h = out;
        }
        if pass == Pass::Statistics {
            return Ok((None, None, rec.stats));
        }
        let pool_shape = h.shape().to_vec();
        let pooled = global_avg_pool(&h)?;
        let mode = if train { Mode::Train } else { Mode::Eval };
        let (features, mask) = match rng {
            Some(r) => dropout(&pooled, self.dropout, mode, r)?,
            None if train && self.dropout > 0.0 => {
                return Err(Error::config("training forward with dropout needs an rng"))
            }
            None => (pooled, None),
        };
        let logits = dense(&features, &self.classifier_weight, &self.classifier_bias)?;
        if !train {
            return Ok((Some(logits), None, rec.stats));
        }
        let tape = Tape {
            input: x.clone(),
            stem_bn: stem_bn.expect("train pass"),
            stem_out: stem_out.expect("train pass"),
            layers: tapes,
            pool_shape,
            mask,
            features,
            stats: rec.stats,
        };
        Ok((Some(logits), Some(tape), Vec::new()))
    }

    /// Inference with the view's running statistics; dropout is off.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (logits, _, _) = self.run::<crate::rng::Rng>(x, Pass::Eval, None)?;
        Ok(logits.expect("eval pass yields logits"))
    }

    /// `Mode::Eval` behaves as [`SubnetView::forward_eval`]; `Mode::Train`
    /// normalises with batch statistics and applies dropout.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => Ok(self.forward_train(x, rng)?.0),
        }
    }

    pub fn forward_train<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<(Tensor, Tape)> {
        let (logits, tape, _) = self.run(x, Pass::Train, Some(rng))?;
        Ok((logits.expect("train pass"), tape.expect("train pass")))
    }

    /// Per-unit batch statistics of `x` (stem first, then three per layer)
    /// without computing logits.
    pub fn batch_statistics(&self, x: &Tensor) -> Result<Vec<BatchStats>> {
        Ok(self.run::<crate::rng::Rng>(x, Pass::Statistics, None)?.2)
    }

    /// Replaces the running statistics used by [`SubnetView::forward_eval`].
    pub fn set_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.bn_count() {
            return Err(Error::shape("statistics do not match the subnet"));
        }
        let mut it = stats.iter();
        let mut set = |bn: &mut BnView| -> Result<()> {
            let st = it.next().unwrap();
            if st.mean.len() != bn.channels() || st.var.len() != bn.channels() {
                return Err(Error::shape("statistics channel mismatch"));
            }
            bn.mean.copy_from_slice(&st.mean);
            bn.var.copy_from_slice(&st.var);
            Ok(())
        };
        set(&mut self.stem_bn)?;
        for l in &mut self.layers {
            set(&mut l.expand_bn)?;
            set(&mut l.depthwise_bn)?;
            set(&mut l.project_bn)?;
        }
        Ok(())
    }

    pub fn bn_count(&self) -> usize {
        1 + 3 * self.layers.len()
    }

    /// Gradients of the loss with respect to the view's weights given the
    /// gradient at the logits.
    pub fn backward(&self, tape: &Tape, grad_logits: &Tensor) -> Result<ViewGrads> {
        let (gf, classifier_weight, classifier_bias) =
            dense_backward(grad_logits, &tape.features, &self.classifier_weight)?;
        let gf = dropout_backward(&gf, tape.mask.as_ref());
        let mut g = global_avg_pool_backward(&gf, &tape.pool_shape)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, t) in self.layers.iter().zip(&tape.layers).rev() {
            let residual = if l.slot.residual() { Some(g.clone()) } else { None };
            let (ga3, dg3, db3) = bn_backward(&g, &t.bn3, &l.project_bn.gamma)?;
            let (mut gr2, gproj) = conv2d_backward(&t.r2, &l.project, &ga3, 1, 0, 1)?;
            drop(ga3);
            relu_backward_in_place(&mut gr2, &t.r2);
            let (ga2, dg2, db2) = bn_backward(&gr2, &t.bn2, &l.depthwise_bn.gamma)?;
            drop(gr2);
            let (mut gr1, gdw) =
                conv2d_backward(&t.r1, &l.depthwise, &ga2, l.slot.stride, l.kernel_size / 2, l.hidden)?;
            drop(ga2);
            relu_backward_in_place(&mut gr1, &t.r1);
            let (ga1, dg1, db1) = bn_backward(&gr1, &t.bn1, &l.expand_bn.gamma)?;
            drop(gr1);
            let (mut gin, gexp) = conv2d_backward(&t.input, &l.expand, &ga1, 1, 0, 1)?;
            if let Some(r) = residual {
                for (a, &b) in gin.data_mut().iter_mut().zip(r.data()) {
                    *a += b;
                }
            }
            layers.push(LayerGrads {
                expand: gexp,
                expand_bn: BnGrads { gamma: dg1, beta: db1 },
                depthwise: gdw,
                depthwise_bn: BnGrads { gamma: dg2, beta: db2 },
                project: gproj,
                project_bn: BnGrads { gamma: dg3, beta: db3 },
            });
            g = gin;
        }
        layers.reverse();
        relu_backward_in_place(&mut g, &tape.stem_out);
        let (ga, dg, db) = bn_backward(&g, &tape.stem_bn, &self.stem_bn.gamma)?;
        let (_, stem) = conv2d_backward(&tape.input, &self.stem, &ga, 1, self.arch.stem_padding, 1)?;
        Ok(ViewGrads {
            stem,
            stem_bn: BnGrads { gamma: dg, beta: db },
            layers,
            classifier_weight,
            classifier_bias,
        })
    }
}
