//! Subnet selection schemes and the per-step schedule they produce.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::fmt;
use core::str::FromStr;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::data::DatasetId;
use crate::optim::LrPolicy;
use crate::rng::{stream, Rng, Stream};
use crate::supernet::GradientSet;
use crate::{ArchSpec, Error, Result, SubnetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeKind {
    /// One uniformly sampled subnet for a whole epoch.
    RssPerEpoch,
    /// `n_subnets` fresh samples every step, gradients averaged.
    RssPerBatch { n_subnets: usize },
    /// Full network first, then elastic kernel, depth and width phases.
    ProgressiveShrinking {
        supernet_epochs: usize,
        kernel_epochs: usize,
        depth_epochs: usize,
        width_epochs: usize,
    },
    SmallestOnly,
    MiddleOnly,
    LargestOnly,
    MaxThenMin,
    MinThenMax,
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Supernet,
    Kernel,
    Depth,
    Width,
}

impl SchemeKind {
    /// Splits `ps_epochs` into equal kernel/depth/width thirds, remainder to width.
    pub fn progressive_shrinking(supernet_epochs: usize, ps_epochs: usize) -> Self {
        let third = ps_epochs / 3;
        SchemeKind::ProgressiveShrinking {
            supernet_epochs,
            kernel_epochs: third,
            depth_epochs: third,
            width_epochs: ps_epochs - 2 * third,
        }
    }

    pub fn default_lr_policy(self) -> LrPolicy {
        match self {
            SchemeKind::SmallestOnly
            | SchemeKind::MiddleOnly
            | SchemeKind::LargestOnly
            | SchemeKind::MaxThenMin
            | SchemeKind::MinThenMax
            | SchemeKind::Alternating => LrPolicy::Constant,
            _ => LrPolicy::Cosine,
        }
    }

    /// Epoch count fixed by the scheme itself, if any.
    pub fn fixed_epochs(self) -> Option<usize> {
        match self {
            SchemeKind::ProgressiveShrinking {
                supernet_epochs,
                kernel_epochs,
                depth_epochs,
                width_epochs,
            } => Some(supernet_epochs + kernel_epochs + depth_epochs + width_epochs),
            _ => None,
        }
    }

    pub fn phase(self, epoch: usize) -> Option<Phase> {
        match self {
            SchemeKind::ProgressiveShrinking {
                supernet_epochs,
                kernel_epochs,
                depth_epochs,
                ..
            } => Some(if epoch < supernet_epochs {
                Phase::Supernet
            } else if epoch < supernet_epochs + kernel_epochs {
                Phase::Kernel
            } else if epoch < supernet_epochs + kernel_epochs + depth_epochs {
                Phase::Depth
            } else {
                Phase::Width
            }),
            _ => None,
        }
    }

    /// Number of subnets trained per optimiser step during `epoch`.
    pub fn subnets_per_step(self, epoch: usize) -> usize {
        match self {
            SchemeKind::RssPerBatch { n_subnets } => n_subnets,
            SchemeKind::ProgressiveShrinking { .. } => match self.phase(epoch) {
                Some(Phase::Depth) => 2,
                Some(Phase::Width) => 4,
                _ => 1,
            },
            _ => 1,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            SchemeKind::RssPerBatch { n_subnets } if !(1..=2).contains(&n_subnets) => Err(
                Error::Config(format!("per-batch sampling supports 1 or 2 subnets, got {n_subnets}")),
            ),
            SchemeKind::ProgressiveShrinking { .. } if self.fixed_epochs() == Some(0) => {
                Err(Error::config("progressive shrinking needs at least one epoch"))
            }
            _ => Ok(()),
        }
    }
}

/// A selection scheme together with its learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub lr_policy: LrPolicy,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind) -> Self {
        SchemeSpec {
            kind,
            lr_policy: kind.default_lr_policy(),
        }
    }

    pub fn with_lr_policy(mut self, policy: LrPolicy) -> Self {
        self.lr_policy = policy;
        self
    }
}

/// Named experiment methods: the two budgets of random subnet sampling,
/// progressive shrinking, and the sampling ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OfaPs,
    Rss,
    RssShort,
    RssPerBatch1,
    RssPerBatch2,
    SmallestOnly,
    MiddleOnly,
    LargestOnly,
    MaxThenMin,
    MinThenMax,
    Alternating,
}

/// Epoch budgets per dataset: supernet pretraining, progressive shrinking,
/// and the short and full random sampling runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochBudget {
    pub supernet: usize,
    pub shrinking: usize,
    pub rss_short: usize,
    pub rss: usize,
}

pub fn epoch_budget(dataset: DatasetId) -> EpochBudget {
    let (supernet, shrinking) = match dataset {
        DatasetId::Mnist => (10, 27),
        DatasetId::FashionMnist => (25, 57),
        DatasetId::Cifar10 | DatasetId::Cifar100 => (180, 410),
    };
    EpochBudget {
        supernet,
        shrinking,
        rss_short: supernet,
        rss: supernet + shrinking,
    }
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::OfaPs,
        Method::Rss,
        Method::RssShort,
        Method::RssPerBatch1,
        Method::RssPerBatch2,
        Method::SmallestOnly,
        Method::MiddleOnly,
        Method::LargestOnly,
        Method::MaxThenMin,
        Method::MinThenMax,
        Method::Alternating,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::OfaPs => "ofa_ps",
            Method::Rss => "rss",
            Method::RssShort => "rss_short",
            Method::RssPerBatch1 => "rss_per_batch_1",
            Method::RssPerBatch2 => "rss_per_batch_2",
            Method::SmallestOnly => "smallest_only",
            Method::MiddleOnly => "middle_only",
            Method::LargestOnly => "largest_only",
            Method::MaxThenMin => "max_then_min",
            Method::MinThenMax => "min_then_max",
            Method::Alternating => "alternating",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Method::OfaPs => "supernet pretraining then progressive shrinking (kernel, depth, width)",
            Method::Rss => "one random subnet per epoch, full budget",
            Method::RssShort => "one random subnet per epoch, supernet-pretraining budget",
            Method::RssPerBatch1 => "one random subnet per batch",
            Method::RssPerBatch2 => "two random subnets per batch, gradients averaged",
            Method::SmallestOnly => "smallest subnet only",
            Method::MiddleOnly => "kernel 5, width 4, depth 3 everywhere",
            Method::LargestOnly => "largest subnet only",
            Method::MaxThenMin => "largest subnet for the first half, then smallest",
            Method::MinThenMax => "smallest subnet for the first half, then largest",
            Method::Alternating => "smallest and largest subnets on alternate epochs",
        }
    }

    /// Default scheme on `dataset`. Everything except the short run and
    /// progressive shrinking uses the full random-sampling budget.
    pub fn scheme(self, dataset: DatasetId) -> SchemeSpec {
        let b = epoch_budget(dataset);
        let kind = match self {
            Method::OfaPs => SchemeKind::progressive_shrinking(b.supernet, b.shrinking),
            Method::Rss | Method::RssShort => SchemeKind::RssPerEpoch,
            Method::RssPerBatch1 => SchemeKind::RssPerBatch { n_subnets: 1 },
            Method::RssPerBatch2 => SchemeKind::RssPerBatch { n_subnets: 2 },
            Method::SmallestOnly => SchemeKind::SmallestOnly,
            Method::MiddleOnly => SchemeKind::MiddleOnly,
            Method::LargestOnly => SchemeKind::LargestOnly,
            Method::MaxThenMin => SchemeKind::MaxThenMin,
            Method::MinThenMax => SchemeKind::MinThenMax,
            Method::Alternating => SchemeKind::Alternating,
        };
        SchemeSpec::new(kind)
    }

    pub fn epochs(self, dataset: DatasetId) -> usize {
        let b = epoch_budget(dataset);
        match self {
            Method::OfaPs => b.supernet + b.shrinking,
            Method::RssShort => b.rss_short,
            _ => b.rss,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Uniform independent draw of every kernel, width and depth entry.
pub fn rss_sample(arch: &ArchSpec, rng: &mut Rng) -> SubnetConfig {
    SubnetConfig::sample(arch, rng)
}

/// Mutable position of a scheme within its schedule.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub arch: ArchSpec,
    pub seed: u64,
    pub total_epochs: usize,
    pub epoch: usize,
    pub step: usize,
    pub phase: Option<Phase>,
    rng: Rng,
    cached: Option<SubnetConfig>,
}

impl SchemeState {
    pub fn new(spec: &SchemeSpec, arch: &ArchSpec, seed: u64, total_epochs: usize) -> Result<Self> {
        spec.kind.validate()?;
        if let Some(fixed) = spec.kind.fixed_epochs() {
            if fixed != total_epochs {
                return Err(Error::Config(format!(
                    "scheme phases sum to {fixed} epochs but the run has {total_epochs}"
                )));
            }
        }
        let mut state = SchemeState {
            arch: arch.clone(),
            seed,
            total_epochs,
            epoch: 0,
            step: 0,
            phase: None,
            rng: stream(seed, Stream::Scheme, &[0]),
            cached: None,
        };
        state.begin_epoch(spec, 0)?;
        Ok(state)
    }

    /// Moves to the start of `epoch`. Sampling depends only on the seed and the
    /// epoch index, so resuming at an epoch boundary replays the same choices.
    pub fn begin_epoch(&mut self, spec: &SchemeSpec, epoch: usize) -> Result<()> {
        if epoch >= self.total_epochs {
            return Err(Error::BudgetExhausted);
        }
        self.epoch = epoch;
        self.step = 0;
        self.phase = spec.kind.phase(epoch);
        self.rng = stream(self.seed, Stream::Scheme, &[epoch as u64]);
        self.cached = match spec.kind {
            SchemeKind::RssPerEpoch => Some(rss_sample(&self.arch, &mut self.rng)),
            _ => None,
        };
        Ok(())
    }

    fn sample_restricted(&mut self, phase: Phase) -> SubnetConfig {
        let arch = &self.arch;
        let max_cfg = SubnetConfig::all_max(arch);
        match phase {
            Phase::Supernet => max_cfg,
            Phase::Kernel => SubnetConfig {
                kernel: (0..arch.num_layers())
                    .map(|_| *arch.kernel_choices.choose(&mut self.rng).unwrap())
                    .collect(),
                ..max_cfg
            },
            Phase::Depth => {
                let kernel = (0..arch.num_layers())
                    .map(|_| *arch.kernel_choices.choose(&mut self.rng).unwrap())
                    .collect();
                let depth = (0..arch.num_blocks)
                    .map(|_| *arch.depth_choices.choose(&mut self.rng).unwrap())
                    .collect();
                SubnetConfig {
                    kernel,
                    depth,
                    ..max_cfg
                }
            }
            Phase::Width => rss_sample(arch, &mut self.rng),
        }
    }
}

/// Subnets to train in the current step; advances the step counter.
pub fn next_subnets(spec: &SchemeSpec, state: &mut SchemeState) -> Result<Vec<SubnetConfig>> {
    if state.epoch >= state.total_epochs {
        return Err(Error::BudgetExhausted);
    }
    let arch = state.arch.clone();
    let (epoch, total) = (state.epoch, state.total_epochs);
    let out = match spec.kind {
        SchemeKind::RssPerEpoch => vec![state.cached.clone().expect("sampled at epoch start")],
        SchemeKind::RssPerBatch { n_subnets } => (0..n_subnets)
            .map(|_| rss_sample(&arch, &mut state.rng))
            .collect(),
        SchemeKind::ProgressiveShrinking { .. } => {
            let phase = spec.kind.phase(epoch).expect("shrinking has phases");
            (0..spec.kind.subnets_per_step(epoch))
                .map(|_| state.sample_restricted(phase))
                .collect()
        }
        SchemeKind::SmallestOnly => vec![SubnetConfig::all_min(&arch)],
        SchemeKind::MiddleOnly => vec![SubnetConfig::middle(&arch)],
        SchemeKind::LargestOnly => vec![SubnetConfig::all_max(&arch)],
        SchemeKind::MaxThenMin | SchemeKind::MinThenMax => {
            let first_half = epoch < total / 2;
            let max_first = spec.kind == SchemeKind::MaxThenMin;
            if first_half == max_first {
                vec![SubnetConfig::all_max(&arch)]
            } else {
                vec![SubnetConfig::all_min(&arch)]
            }
        }
        SchemeKind::Alternating => {
            if epoch % 2 == 0 {
                vec![SubnetConfig::all_min(&arch)]
            } else {
                vec![SubnetConfig::all_max(&arch)]
            }
        }
    };
    state.step += 1;
    Ok(out)
}

/// Element-wise arithmetic mean of per-subnet gradient sets.
pub fn combine_gradients(sets: Vec<GradientSet>) -> Result<GradientSet> {
    let k = sets.len();
    let mut it = sets.into_iter();
    let mut acc = it.next().ok_or(Error::Empty("gradient sets"))?;
    if k == 1 {
        return Ok(acc);
    }
    for set in it {
        if set.len() != acc.len() {
            return Err(Error::shape("gradient sets cover different parameter stores"));
        }
        for (a, g) in acc.iter_mut().zip(&set) {
            if a.shape() != g.shape() {
                return Err(Error::shape("gradient tensor shape mismatch"));
            }
            for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
    let inv = k as f32;
    for t in acc.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x /= inv);
    }
    Ok(acc)
}

/// A short human-readable label for logs.
pub fn describe(kind: &SchemeKind) -> String {
    match kind {
        SchemeKind::RssPerBatch { n_subnets } => format!("rss_per_batch({n_subnets})"),
        SchemeKind::ProgressiveShrinking {
            supernet_epochs,
            kernel_epochs,
            depth_epochs,
            width_epochs,
        } => format!("ps({supernet_epochs}+{kernel_epochs}/{depth_epochs}/{width_epochs})"),
        SchemeKind::RssPerEpoch => "rss_per_epoch".into(),
        SchemeKind::SmallestOnly => "smallest_only".into(),
        SchemeKind::MiddleOnly => "middle_only".into(),
        SchemeKind::LargestOnly => "largest_only".into(),
        SchemeKind::MaxThenMin => "max_then_min".into(),
        SchemeKind::MinThenMax => "min_then_max".into(),
        SchemeKind::Alternating => "alternating".into(),
    }
}
