//! The elastic search space: network shape, choice sets and subnet settings.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigUint;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetId;
use crate::rng::fnv1a;
use crate::{Error, Result};

pub const KERNEL_CHOICES: [usize; 3] = [3, 5, 7];
pub const WIDTH_CHOICES: [usize; 3] = [3, 4, 6];
pub const DEPTH_CHOICES: [usize; 3] = [2, 3, 4];

/// Shape of the supernet and its elastic choice sets.
///
/// Every layer is an inverted residual: 1x1 expand to `width * in_channels`,
/// depthwise `k x k`, 1x1 project. The first layer of a block carries the
/// block stride and channel change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub num_blocks: usize,
    pub max_depth: usize,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_padding: usize,
    pub block_out_channels: Vec<usize>,
    pub block_strides: Vec<usize>,
    pub num_classes: usize,
    pub input_hw: (usize, usize),
    pub kernel_choices: Vec<usize>,
    pub width_choices: Vec<usize>,
    pub depth_choices: Vec<usize>,
}

/// Static description of one elastic layer slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub index: usize,
    pub block: usize,
    pub position: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub max_hidden: usize,
    pub max_kernel: usize,
    /// Spatial size of the layer input.
    pub in_hw: (usize, usize),
}

impl LayerSlot {
    pub fn residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn out_hw(&self) -> (usize, usize) {
        // "same" padding k/2 for odd k gives the same output size for every k.
        (
            (self.in_hw.0 - 1) / self.stride + 1,
            (self.in_hw.1 - 1) / self.stride + 1,
        )
    }
}

impl ArchSpec {
    /// 3-channel 32x32 inputs (CIFAR).
    ///
    /// Channel counts put the all-max subnet at 14.92 MFLOPs and the all-min
    /// subnet at 3.81 MFLOPs with 10 classes.
    pub fn cifar(num_classes: usize) -> Self {
        ArchSpec {
            num_blocks: 5,
            max_depth: 4,
            in_channels: 3,
            stem_channels: 24,
            stem_kernel: 3,
            stem_padding: 1,
            block_out_channels: vec![8, 8, 16, 32, 64],
            block_strides: vec![2, 2, 2, 1, 1],
            num_classes,
            input_hw: (32, 32),
            kernel_choices: KERNEL_CHOICES.to_vec(),
            width_choices: WIDTH_CHOICES.to_vec(),
            depth_choices: DEPTH_CHOICES.to_vec(),
        }
    }

    /// 1-channel 28x28 inputs (MNIST, Fashion-MNIST). The stem pads by 3 so the
    /// body runs at 32x32; all-max is 14.94 MFLOPs, all-min 3.88 MFLOPs.
    pub fn grayscale28() -> Self {
        ArchSpec {
            num_blocks: 5,
            max_depth: 4,
            in_channels: 1,
            stem_channels: 28,
            stem_kernel: 3,
            stem_padding: 3,
            block_out_channels: vec![8, 8, 16, 24, 56],
            block_strides: vec![2, 2, 2, 1, 1],
            num_classes: 10,
            input_hw: (28, 28),
            kernel_choices: KERNEL_CHOICES.to_vec(),
            width_choices: WIDTH_CHOICES.to_vec(),
            depth_choices: DEPTH_CHOICES.to_vec(),
        }
    }

    pub fn for_dataset(id: DatasetId) -> Self {
        match id {
            DatasetId::Mnist | DatasetId::FashionMnist => ArchSpec::grayscale28(),
            DatasetId::Cifar10 => ArchSpec::cifar(10),
            DatasetId::Cifar100 => ArchSpec::cifar(100),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.num_blocks * self.max_depth
    }

    pub fn stem_out_hw(&self) -> (usize, usize) {
        let k = self.stem_kernel;
        let p = self.stem_padding;
        (
            self.input_hw.0 + 2 * p + 1 - k,
            self.input_hw.1 + 2 * p + 1 - k,
        )
    }

    pub fn max_kernel(&self) -> usize {
        self.kernel_choices.iter().copied().max().unwrap_or(0)
    }

    pub fn max_width(&self) -> usize {
        self.width_choices.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_blocks == 0 || self.max_depth == 0 {
            return fail("num_blocks and max_depth must be positive".into());
        }
        if self.block_out_channels.len() != self.num_blocks
            || self.block_strides.len() != self.num_blocks
        {
            return fail(format!(
                "expected {} block channel counts and strides",
                self.num_blocks
            ));
        }
        if self.in_channels == 0
            || self.stem_channels == 0
            || self.block_out_channels.contains(&0)
            || self.num_classes == 0
        {
            return fail("channel and class counts must be positive".into());
        }
        if self.block_strides.contains(&0) {
            return fail("strides must be positive".into());
        }
        if self.kernel_choices.is_empty()
            || self.width_choices.is_empty()
            || self.depth_choices.is_empty()
        {
            return fail("choice sets must be non-empty".into());
        }
        if self.kernel_choices.iter().any(|&k| k == 0 || k % 2 == 0) {
            return fail("kernel choices must be odd".into());
        }
        if self.width_choices.contains(&0) {
            return fail("width choices must be positive".into());
        }
        if self
            .depth_choices
            .iter()
            .any(|&d| d == 0 || d > self.max_depth)
        {
            return fail(format!("depth choices must lie in 1..={}", self.max_depth));
        }
        if self.stem_kernel == 0
            || self.input_hw.0 + 2 * self.stem_padding < self.stem_kernel
            || self.input_hw.1 + 2 * self.stem_padding < self.stem_kernel
        {
            return fail("stem kernel larger than padded input".into());
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let mut slots = Vec::with_capacity(self.num_layers());
        let mut hw = self.stem_out_hw();
        let mut cin = self.stem_channels;
        let max_w = self.max_width();
        let max_k = self.max_kernel();
        for b in 0..self.num_blocks {
            for pos in 0..self.max_depth {
                let stride = if pos == 0 { self.block_strides[b] } else { 1 };
                let slot = LayerSlot {
                    index: b * self.max_depth + pos,
                    block: b,
                    position: pos,
                    in_channels: cin,
                    out_channels: self.block_out_channels[b],
                    stride,
                    max_hidden: max_w * cin,
                    max_kernel: max_k,
                    in_hw: hw,
                };
                hw = slot.out_hw();
                cin = slot.out_channels;
                slots.push(slot);
            }
        }
        slots
    }

    pub fn last_channels(&self) -> usize {
        *self.block_out_channels.last().unwrap_or(&self.stem_channels)
    }
}

/// Per-layer kernel and width settings plus per-block depth.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubnetConfig {
    pub kernel: Vec<usize>,
    pub width: Vec<usize>,
    pub depth: Vec<usize>,
}

impl SubnetConfig {
    pub fn uniform(arch: &ArchSpec, kernel: usize, width: usize, depth: usize) -> Self {
        SubnetConfig {
            kernel: vec![kernel; arch.num_layers()],
            width: vec![width; arch.num_layers()],
            depth: vec![depth; arch.num_blocks],
        }
    }

    pub fn all_max(arch: &ArchSpec) -> Self {
        let max = |v: &[usize]| v.iter().copied().max().unwrap_or(0);
        Self::uniform(
            arch,
            max(&arch.kernel_choices),
            max(&arch.width_choices),
            max(&arch.depth_choices),
        )
    }

    pub fn all_min(arch: &ArchSpec) -> Self {
        let min = |v: &[usize]| v.iter().copied().min().unwrap_or(0);
        Self::uniform(
            arch,
            min(&arch.kernel_choices),
            min(&arch.width_choices),
            min(&arch.depth_choices),
        )
    }

    /// Median of every choice set: kernel 5, width 4, depth 3 for the defaults.
    pub fn middle(arch: &ArchSpec) -> Self {
        let mid = |v: &[usize]| {
            let mut s = v.to_vec();
            s.sort_unstable();
            s[s.len() / 2]
        };
        Self::uniform(
            arch,
            mid(&arch.kernel_choices),
            mid(&arch.width_choices),
            mid(&arch.depth_choices),
        )
    }

    /// Uniform independent draw of every entry from its choice set.
    pub fn sample<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Self {
        let kernel = (0..arch.num_layers())
            .map(|_| *arch.kernel_choices.choose(rng).unwrap())
            .collect();
        let width = (0..arch.num_layers())
            .map(|_| *arch.width_choices.choose(rng).unwrap())
            .collect();
        let depth = (0..arch.num_blocks)
            .map(|_| *arch.depth_choices.choose(rng).unwrap())
            .collect();
        SubnetConfig {
            kernel,
            width,
            depth,
        }
    }

    pub fn validate(&self, arch: &ArchSpec) -> Result<()> {
        let n = arch.num_layers();
        if self.kernel.len() != n || self.width.len() != n || self.depth.len() != arch.num_blocks {
            return Err(Error::Config(format!(
                "subnet config needs {n} kernel, {n} width and {} depth entries, got {}/{}/{}",
                arch.num_blocks,
                self.kernel.len(),
                self.width.len(),
                self.depth.len()
            )));
        }
        let check = |vals: &[usize], set: &[usize], what: &str| -> Result<()> {
            match vals.iter().position(|v| !set.contains(v)) {
                None => Ok(()),
                Some(i) => Err(Error::Config(format!(
                    "{what}[{i}] = {} not in {set:?}",
                    vals[i]
                ))),
            }
        };
        check(&self.kernel, &arch.kernel_choices, "kernel")?;
        check(&self.width, &arch.width_choices, "width")?;
        check(&self.depth, &arch.depth_choices, "depth")
    }

    pub fn is_active(&self, arch: &ArchSpec, layer: usize) -> bool {
        layer % arch.max_depth < self.depth[layer / arch.max_depth]
    }

    pub fn hash(&self) -> u64 {
        let bytes = self
            .kernel
            .iter()
            .chain([&0usize])
            .chain(&self.width)
            .chain([&0usize])
            .chain(&self.depth)
            .map(|&v| v as u8);
        fnv1a(bytes)
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }
}

/// Number of distinct subnets: `(sum_d (|K| * |W|)^d)^blocks`.
pub fn population_size(arch: &ArchSpec) -> BigUint {
    let per_layer = BigUint::from(arch.kernel_choices.len() * arch.width_choices.len());
    let per_block: BigUint = arch
        .depth_choices
        .iter()
        .map(|&d| per_layer.pow(d as u32))
        .sum();
    per_block.pow(arch.num_blocks as u32)
}
