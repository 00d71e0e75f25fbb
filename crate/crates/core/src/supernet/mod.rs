//! Shared-weight supernet: one parameter store at maximum kernel, width and
//! depth, from which every subnet is derived by slicing and kernel transforms.

pub mod kernel;
mod network;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::arch::{ArchSpec, LayerSlot};
use crate::ops::{update_running, BatchNorm, BatchStats};
use crate::rng::{stream, Stream};
use crate::{Error, Param, Result, SubnetConfig, Tensor};

pub use kernel::{center_crop, derive_kernel, derive_kernel_backward, KernelTrace};
pub use network::{BnGrads, BnView, LayerGrads, LayerView, SubnetView, Tape, ViewGrads};

pub const DEFAULT_DROPOUT: f32 = 0.1;

/// Parameters of one elastic inverted-residual layer, stored at maximum size.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticLayer {
    pub slot: LayerSlot,
    /// `max_hidden, in, 1, 1`
    pub expand: Param,
    pub expand_bn: BatchNorm,
    /// `max_hidden, 1, K, K` with `K` the largest kernel choice.
    pub depthwise: Param,
    /// `(size, T)` pairs in decreasing size; `T` is `size^2 x size^2`.
    pub transforms: Vec<(usize, Param)>,
    pub depthwise_bn: BatchNorm,
    /// `out, max_hidden, 1, 1`
    pub project: Param,
    pub project_bn: BatchNorm,
}

impl ElasticLayer {
    pub fn transform(&self, size: usize) -> Option<&Param> {
        self.transforms.iter().find(|(s, _)| *s == size).map(|(_, p)| p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupernetParams {
    pub arch: ArchSpec,
    pub stem: Param,
    pub stem_bn: BatchNorm,
    pub layers: Vec<ElasticLayer>,
    /// `classes, last_channels`
    pub classifier_weight: Param,
    pub classifier_bias: Param,
    pub dropout: f32,
}

/// A named tensor of the persistent state (parameters, BN running statistics
/// and optimiser momentum).
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// One gradient tensor per parameter, in [`SupernetParams::params`] order.
pub type GradientSet = Vec<Tensor>;

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut crate::rng::Rng) -> Tensor {
    let bound = libm::sqrtf(6.0 / fan_in as f32);
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-bound..bound)).collect())
        .expect("length matches shape")
}

/// Builds the supernet with He-uniform fan-in initialisation, BN affine at
/// `(1, 0)` and identity kernel transforms.
pub fn build_supernet(arch: &ArchSpec, seed: u64) -> Result<SupernetParams> {
    arch.validate()?;
    let mut rng = stream(seed, Stream::Init, &[]);
    let k = arch.stem_kernel;
    let stem = Param::new(
        he_uniform(&[arch.stem_channels, arch.in_channels, k, k], arch.in_channels * k * k, &mut rng),
        false,
    );
    let mut sizes: Vec<usize> = arch.kernel_choices.clone();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes.dedup();
    let kmax = sizes[0];
    let layers = arch
        .layers()
        .into_iter()
        .map(|slot| {
            let (h, cin, cout) = (slot.max_hidden, slot.in_channels, slot.out_channels);
            ElasticLayer {
                slot,
                expand: Param::new(he_uniform(&[h, cin, 1, 1], cin, &mut rng), false),
                expand_bn: BatchNorm::new(h),
                depthwise: Param::new(he_uniform(&[h, 1, kmax, kmax], kmax * kmax, &mut rng), false),
                transforms: sizes[1..]
                    .iter()
                    .map(|&s| (s, Param::new(Tensor::identity(s * s), false)))
                    .collect(),
                depthwise_bn: BatchNorm::new(h),
                project: Param::new(he_uniform(&[cout, h, 1, 1], h, &mut rng), false),
                project_bn: BatchNorm::new(cout),
            }
        })
        .collect();
    let last = arch.last_channels();
    let classifier_weight = Param::new(he_uniform(&[arch.num_classes, last], last, &mut rng), false);
    let classifier_bias = Param::new(Tensor::zeros(&[arch.num_classes]), true);
    Ok(SupernetParams {
        arch: arch.clone(),
        stem,
        stem_bn: BatchNorm::new(arch.stem_channels),
        layers,
        classifier_weight,
        classifier_bias,
        dropout: DEFAULT_DROPOUT,
    })
}

fn bn_names(prefix: &str) -> [String; 2] {
    [format!("{prefix}.bn.gamma"), format!("{prefix}.bn.beta")]
}

impl SupernetParams {
    pub fn with_dropout(mut self, rate: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.dropout = rate;
        Ok(self)
    }

    /// Every trainable parameter with its name, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        let [g, b] = bn_names("stem");
        out.push((String::from("stem.weight"), &self.stem));
        out.push((g, &self.stem_bn.gamma));
        out.push((b, &self.stem_bn.beta));
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.expand.weight"), &l.expand));
            let [g, b] = bn_names(&format!("{p}.expand"));
            out.push((g, &l.expand_bn.gamma));
            out.push((b, &l.expand_bn.beta));
            out.push((format!("{p}.depthwise.weight"), &l.depthwise));
            for (s, t) in &l.transforms {
                out.push((format!("{p}.depthwise.transform{s}"), t));
            }
            let [g, b] = bn_names(&format!("{p}.depthwise"));
            out.push((g, &l.depthwise_bn.gamma));
            out.push((b, &l.depthwise_bn.beta));
            out.push((format!("{p}.project.weight"), &l.project));
            let [g, b] = bn_names(&format!("{p}.project"));
            out.push((g, &l.project_bn.gamma));
            out.push((b, &l.project_bn.beta));
        }
        out.push((String::from("classifier.weight"), &self.classifier_weight));
        out.push((String::from("classifier.bias"), &self.classifier_bias));
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    /// Same order as [`SupernetParams::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        out.push(&mut self.stem);
        out.push(&mut self.stem_bn.gamma);
        out.push(&mut self.stem_bn.beta);
        for l in &mut self.layers {
            out.push(&mut l.expand);
            out.push(&mut l.expand_bn.gamma);
            out.push(&mut l.expand_bn.beta);
            out.push(&mut l.depthwise);
            for (_, t) in &mut l.transforms {
                out.push(t);
            }
            out.push(&mut l.depthwise_bn.gamma);
            out.push(&mut l.depthwise_bn.beta);
            out.push(&mut l.project);
            out.push(&mut l.project_bn.gamma);
            out.push(&mut l.project_bn.beta);
        }
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    fn batch_norms(&self) -> Vec<(String, &BatchNorm)> {
        let mut out = Vec::new();
        out.push((String::from("stem"), &self.stem_bn));
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.expand"), &l.expand_bn));
            out.push((format!("layers.{i}.depthwise"), &l.depthwise_bn));
            out.push((format!("layers.{i}.project"), &l.project_bn));
        }
        out
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut out = Vec::new();
        out.push(&mut self.stem_bn);
        for l in &mut self.layers {
            out.push(&mut l.expand_bn);
            out.push(&mut l.depthwise_bn);
            out.push(&mut l.project_bn);
        }
        out
    }

    /// Number of trainable scalars in the whole store.
    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Trainable scalars a derived subnet actually uses (transform matrices
    /// counted for the layers that apply them).
    pub fn subnet_parameter_count(&self, cfg: &SubnetConfig) -> Result<usize> {
        cfg.validate(&self.arch)?;
        let a = &self.arch;
        let mut n = self.stem.value.len() + 2 * a.stem_channels;
        for (i, l) in self.layers.iter().enumerate() {
            if !cfg.is_active(a, i) {
                continue;
            }
            let s = &l.slot;
            let h = cfg.width[i] * s.in_channels;
            let k = cfg.kernel[i];
            n += h * s.in_channels + 2 * h;
            n += h * k * k + 2 * h;
            n += l
                .transforms
                .iter()
                .filter(|(size, _)| *size >= k)
                .map(|(_, t)| t.value.len())
                .sum::<usize>();
            n += s.out_channels * h + 2 * s.out_channels;
        }
        n += self.classifier_weight.value.len() + self.classifier_bias.value.len();
        Ok(n)
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn grads(&self) -> GradientSet {
        self.params().into_iter().map(|p| p.grad.clone()).collect()
    }

    pub fn set_grads(&mut self, grads: GradientSet) -> Result<()> {
        let mut params = self.params_mut();
        if grads.len() != params.len() {
            return Err(Error::shape("gradient set does not match the parameter store"));
        }
        for (p, g) in params.iter_mut().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::shape("gradient tensor shape mismatch"));
            }
            p.grad = g;
        }
        Ok(())
    }

    /// Derives the weights of the subnet selected by `cfg`.
    pub fn derive_subnet(&self, cfg: &SubnetConfig) -> Result<SubnetView> {
        network::derive(self, cfg)
    }

    /// Adds a subnet's gradients into the matching slices of the shared
    /// parameters. Regions the subnet does not use are left untouched.
    pub fn accumulate_grads(&mut self, view: &SubnetView, grads: &ViewGrads) -> Result<()> {
        add(self.stem.grad.data_mut(), grads.stem.data());
        add_bn(&mut self.stem_bn, &grads.stem_bn);
        if grads.layers.len() != view.layers.len() {
            return Err(Error::shape("gradients do not match the subnet"));
        }
        for (lv, lg) in view.layers.iter().zip(&grads.layers) {
            let layer = &mut self.layers[lv.slot.index];
            let (h, cin, cout) = (lv.hidden, lv.slot.in_channels, lv.slot.out_channels);
            add(&mut layer.expand.grad.data_mut()[..h * cin], lg.expand.data());
            add_bn(&mut layer.expand_bn, &lg.expand_bn);
            let kmax = layer.slot.max_kernel;
            let (chain, mut tgrads): (Vec<(usize, &Tensor)>, Vec<&mut [f32]>) = layer
                .transforms
                .iter_mut()
                .map(|(s, p)| ((*s, &p.value), p.grad.data_mut()))
                .unzip();
            derive_kernel_backward(
                &lg.depthwise,
                &lv.trace,
                &chain,
                kmax,
                &mut layer.depthwise.grad.data_mut()[..h * kmax * kmax],
                &mut tgrads,
            )?;
            add_bn(&mut layer.depthwise_bn, &lg.depthwise_bn);
            let max_h = layer.slot.max_hidden;
            let pg = layer.project.grad.data_mut();
            for o in 0..cout {
                add(&mut pg[o * max_h..o * max_h + h], &lg.project.data()[o * h..(o + 1) * h]);
            }
            add_bn(&mut layer.project_bn, &lg.project_bn);
        }
        add(self.classifier_weight.grad.data_mut(), grads.classifier_weight.data());
        add(self.classifier_bias.grad.data_mut(), grads.classifier_bias.data());
        Ok(())
    }

    /// Folds the batch statistics recorded by a training forward pass into the
    /// running statistics of the slices the subnet used.
    pub fn update_running_stats(&mut self, view: &SubnetView, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != 1 + 3 * view.layers.len() {
            return Err(Error::shape("batch statistics do not match the subnet"));
        }
        let momentum = self.stem_bn.momentum;
        let mut bns = self.batch_norms_mut();
        let mut order = Vec::with_capacity(stats.len());
        order.push(0);
        for lv in &view.layers {
            let base = 1 + 3 * lv.slot.index;
            order.extend([base, base + 1, base + 2]);
        }
        for (&unit, st) in order.iter().zip(stats) {
            let bn = &mut bns[unit];
            let c = st.mean.len();
            update_running(&mut bn.running_mean[..c], &mut bn.running_var[..c], st, momentum);
        }
        Ok(())
    }

    /// Parameters, momentum buffers and BN running statistics, by name.
    pub fn state(&self) -> Vec<StateTensor> {
        let mut out = Vec::new();
        for (name, p) in self.named_params() {
            out.push(StateTensor {
                name: name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            });
            out.push(StateTensor {
                name: format!("{name}.momentum"),
                shape: p.momentum.shape().to_vec(),
                data: p.momentum.data().to_vec(),
            });
        }
        for (prefix, bn) in self.batch_norms() {
            out.push(StateTensor {
                name: format!("{prefix}.bn.running_mean"),
                shape: alloc::vec![bn.channels()],
                data: bn.running_mean.clone(),
            });
            out.push(StateTensor {
                name: format!("{prefix}.bn.running_var"),
                shape: alloc::vec![bn.channels()],
                data: bn.running_var.clone(),
            });
        }
        out
    }

    /// Inverse of [`SupernetParams::state`]. Every tensor must be present with
    /// the expected shape.
    pub fn load_state(&mut self, state: &[StateTensor]) -> Result<()> {
        let expected = self.state();
        if state.len() != expected.len() {
            return Err(Error::Config(format!(
                "state has {} tensors, architecture needs {}",
                state.len(),
                expected.len()
            )));
        }
        for (e, s) in expected.iter().zip(state) {
            if e.name != s.name || e.shape != s.shape || s.data.len() != e.data.len() {
                return Err(Error::Config(format!(
                    "state tensor {} {:?} does not match expected {} {:?}",
                    s.name, s.shape, e.name, e.shape
                )));
            }
        }
        let mut it = state.iter();
        for p in self.params_mut() {
            p.value.data_mut().copy_from_slice(&it.next().unwrap().data);
            p.momentum.data_mut().copy_from_slice(&it.next().unwrap().data);
        }
        for bn in self.batch_norms_mut() {
            bn.running_mean.copy_from_slice(&it.next().unwrap().data);
            bn.running_var.copy_from_slice(&it.next().unwrap().data);
        }
        Ok(())
    }
}

fn add(dst: &mut [f32], src: &[f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn add_bn(bn: &mut BatchNorm, g: &BnGrads) {
    add(&mut bn.gamma.grad.data_mut()[..g.gamma.len()], &g.gamma);
    add(&mut bn.beta.grad.data_mut()[..g.beta.len()], &g.beta);
}
