//! The training loop that executes a selection scheme.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{augment, batches, AugmentPolicy, Dataset, DatasetId};
use crate::flops::count_macs;
use crate::ops::softmax_cross_entropy;
use crate::optim::{sgd_step, DEFAULT_BASE_LR, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
use crate::rng::{fnv1a, stream, Stream};
use crate::schemes::{combine_gradients, next_subnets, SchemeSpec, SchemeState};
use crate::supernet::DEFAULT_DROPOUT;
use crate::{Error, Result, SupernetParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetId,
    pub batch_size: usize,
    pub base_lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub dropout: f32,
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentPolicy,
}

impl TrainConfig {
    pub fn new(dataset: DatasetId, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            dataset,
            batch_size: 64,
            base_lr: DEFAULT_BASE_LR,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            dropout: DEFAULT_DROPOUT,
            epochs,
            seed,
            augment: dataset.default_augment(),
        }
    }

    pub fn validate(&self, spec: &SchemeSpec) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::config("base_lr must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if let Some(fixed) = spec.kind.fixed_epochs() {
            if fixed != self.epochs {
                return Err(Error::Config(format!(
                    "scheme phases sum to {fixed} epochs, config has {}",
                    self.epochs
                )));
            }
        }
        spec.kind.validate()
    }
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f32,
    pub mean_loss: f64,
    /// Hash of the subnet when the epoch trained a single one, otherwise a
    /// digest of the full ordered sequence of sampled subnets.
    pub config_hash: String,
    pub subnet_samples: usize,
    pub distinct_subnets: usize,
    pub steps: usize,
    /// Wall-clock seconds for this epoch as reported by the observer clock.
    pub seconds: f64,
    /// Training MACs so far, counting each step as three forward passes over
    /// the batch for every subnet trained in it.
    pub cumulative_macs: u64,
}

/// Hooks for a running training loop. The core crate has no clock of its own.
pub trait TrainObserver {
    /// Monotonic seconds.
    fn now(&mut self) -> f64 {
        0.0
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _net: &SupernetParams) -> Result<()> {
        Ok(())
    }
}

/// Observer that records nothing.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub cumulative_macs: u64,
    /// Clock reading at the start of the first trained epoch and at the end of
    /// the last one.
    pub started: f64,
    pub finished: f64,
}

/// Where to pick up a run: the next epoch to train and the MACs already spent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Resume {
    pub epoch: usize,
    pub cumulative_macs: u64,
}

/// Trains `net` on `data` under `spec` for `cfg.epochs` epochs.
pub fn train_run(
    net: &mut SupernetParams,
    spec: &SchemeSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary> {
    train_from(net, spec, cfg, data, Resume::default(), observer)
}

pub fn train_from(
    net: &mut SupernetParams,
    spec: &SchemeSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    resume: Resume,
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary> {
    cfg.validate(spec)?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if resume.epoch > cfg.epochs {
        return Err(Error::config("resume epoch beyond the schedule"));
    }
    net.dropout = cfg.dropout;
    let arch = net.arch.clone();
    let mut state = SchemeState::new(spec, &arch, cfg.seed, cfg.epochs)?;
    let mut macs_total = resume.cumulative_macs;
    let mut records = Vec::new();
    let started = observer.now();
    for epoch in resume.epoch..cfg.epochs {
        let t0 = observer.now();
        state.begin_epoch(spec, epoch)?;
        let lr = spec.lr_policy.lr(epoch, cfg.epochs, cfg.base_lr)?;
        let order = batches(data.len(), cfg.batch_size, cfg.seed, epoch, true)?;
        let mut loss_sum = 0.0f64;
        let mut samples = 0usize;
        let mut hashes: Vec<u64> = Vec::new();
        for (step, idx) in order.iter().enumerate() {
            let (mut x, labels) = data.gather(idx);
            if !cfg.augment.is_identity() {
                let mut rng = stream(cfg.seed, Stream::Augment, &[epoch as u64, step as u64]);
                augment(&mut x, &mut rng, cfg.augment);
            }
            let subnets = next_subnets(spec, &mut state)?;
            let mut sets = Vec::with_capacity(subnets.len());
            for (j, sub) in subnets.iter().enumerate() {
                let view = net.derive_subnet(sub)?;
                let mut rng = stream(
                    cfg.seed,
                    Stream::Dropout,
                    &[epoch as u64, step as u64, j as u64],
                );
                let (logits, tape) = view.forward_train(&x, &mut rng)?;
                let non_finite = || Error::NonFiniteLoss {
                    epoch,
                    step,
                    config_hash: sub.hash_hex(),
                };
                let (loss, grad) = match softmax_cross_entropy(&logits, &labels) {
                    Ok(v) => v,
                    Err(Error::Numeric(_)) => return Err(non_finite()),
                    Err(e) => return Err(e),
                };
                if !loss.is_finite() {
                    return Err(non_finite());
                }
                let grads = view.backward(&tape, &grad)?;
                net.zero_grads();
                net.accumulate_grads(&view, &grads)?;
                net.update_running_stats(&view, &tape.stats)?;
                sets.push(net.grads());
                loss_sum += loss as f64;
                samples += 1;
                hashes.push(sub.hash());
                macs_total += 3 * count_macs(sub, &arch)? * idx.len() as u64;
            }
            let combined = combine_gradients(sets)?;
            net.set_grads(combined)?;
            sgd_step(net.params_mut(), lr, cfg.momentum, cfg.weight_decay);
        }
        let mut distinct = hashes.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let config_hash = if distinct.len() == 1 {
            format!("{:016x}", distinct[0])
        } else {
            format!("{:016x}", fnv1a(hashes.iter().flat_map(|h| h.to_le_bytes())))
        };
        let record = EpochRecord {
            epoch,
            lr,
            mean_loss: loss_sum / samples.max(1) as f64,
            config_hash,
            subnet_samples: samples,
            distinct_subnets: distinct.len(),
            steps: order.len(),
            seconds: observer.now() - t0,
            cumulative_macs: macs_total,
        };
        observer.on_epoch(&record, net)?;
        records.push(record);
    }
    let finished = observer.now();
    Ok(TrainSummary {
        records,
        cumulative_macs: macs_total,
        started,
        finished,
    })
}
