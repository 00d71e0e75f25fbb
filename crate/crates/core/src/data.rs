//! In-memory datasets, normalisation, augmentation and seeded batch order.
//!
//! Parsing the on-disk IDX and CIFAR containers lives in the companion crate;
//! this module starts from decoded pixels.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    #[serde(rename = "mnist")]
    Mnist,
    #[serde(rename = "fmnist")]
    FashionMnist,
    #[serde(rename = "cifar10")]
    Cifar10,
    #[serde(rename = "cifar100")]
    Cifar100,
}

impl DatasetId {
    pub const ALL: [DatasetId; 4] = [
        DatasetId::Mnist,
        DatasetId::FashionMnist,
        DatasetId::Cifar10,
        DatasetId::Cifar100,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::FashionMnist => "fmnist",
            DatasetId::Cifar10 => "cifar10",
            DatasetId::Cifar100 => "cifar100",
        }
    }

    /// `(channels, height, width)`.
    pub fn image_shape(self) -> (usize, usize, usize) {
        match self {
            DatasetId::Mnist | DatasetId::FashionMnist => (1, 28, 28),
            DatasetId::Cifar10 | DatasetId::Cifar100 => (3, 32, 32),
        }
    }

    pub fn class_count(self) -> usize {
        match self {
            DatasetId::Cifar100 => 100,
            _ => 10,
        }
    }

    pub fn default_augment(self) -> AugmentPolicy {
        match self {
            DatasetId::Cifar10 | DatasetId::Cifar100 => AugmentPolicy::CIFAR,
            _ => AugmentPolicy::NONE,
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetId::Mnist),
            "fmnist" | "fashion-mnist" | "fashion_mnist" => Ok(DatasetId::FashionMnist),
            "cifar10" | "cifar-10" => Ok(DatasetId::Cifar10),
            "cifar100" | "cifar-100" => Ok(DatasetId::Cifar100),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}' (expected mnist, fmnist, cifar10, cifar100)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel statistics computed on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: DatasetId,
    pub split: Split,
    /// `N,C,H,W`.
    pub images: Tensor,
    pub labels: Vec<u16>,
    pub class_count: usize,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(id: DatasetId, split: Split, images: Tensor, labels: Vec<u16>) -> Result<Self> {
        let (c, h, w) = id.image_shape();
        if images.shape().len() != 4 || images.shape()[1..] != [c, h, w] {
            return Err(Error::shape(format!(
                "{id} images must be N,{c},{h},{w}, got {:?}",
                images.shape()
            )));
        }
        if images.dim(0) != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.dim(0),
                labels.len()
            )));
        }
        let class_count = id.class_count();
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(Error::Config(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        Ok(Dataset {
            id,
            split,
            images,
            labels,
            class_count,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.images.len() / self.len().max(1)
    }

    /// Copies the selected examples into a batch tensor and label vector.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.image_len();
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        (Tensor::from_vec(&shape, data).expect("gather shape"), labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.gather(indices);
        Dataset {
            id: self.id,
            split: self.split,
            images,
            labels: labels.into_iter().map(|l| l as u16).collect(),
            class_count: self.class_count,
            normalization: self.normalization.clone(),
        }
    }

    /// First `n` examples of a seeded permutation.
    pub fn random_subset(&self, n: usize, seed: u64, stream: Stream) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, stream, &[]));
        idx.truncate(n.min(self.len()));
        self.subset(&idx)
    }
}

/// Per-channel mean and standard deviation of a training split.
pub fn fit_normalization(train: &Dataset) -> Result<Normalization> {
    if train.is_empty() {
        return Err(Error::Empty("normalisation split"));
    }
    let c = train.images.dim(1);
    let plane = train.images.dim(2) * train.images.dim(3);
    let n = train.len();
    let count = (n * plane) as f64;
    let data = train.images.data();
    let mut mean = vec![0.0f32; c];
    let mut std = vec![0.0f32; c];
    for ch in 0..c {
        let planes = (0..n).map(|i| &data[(i * c + ch) * plane..(i * c + ch + 1) * plane]);
        let sum: f64 = planes
            .clone()
            .map(|p| p.iter().map(|&v| v as f64).sum::<f64>())
            .sum();
        let m = sum / count;
        let sq: f64 = planes
            .map(|p| p.iter().map(|&v| (v as f64 - m) * (v as f64 - m)).sum::<f64>())
            .sum();
        mean[ch] = m as f32;
        std[ch] = libm::sqrt(sq / count).max(1e-12) as f32;
    }
    Ok(Normalization { mean, std })
}

/// Applies stored statistics in place and records them on the dataset.
pub fn normalize_with(ds: &mut Dataset, stats: &Normalization) -> Result<()> {
    let c = ds.images.dim(1);
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::shape("normalisation channel count mismatch"));
    }
    let plane = ds.images.dim(2) * ds.images.dim(3);
    for (i, v) in ds.images.data_mut().iter_mut().enumerate() {
        let ch = (i / plane) % c;
        *v = (*v - stats.mean[ch]) / stats.std[ch];
    }
    ds.normalization = Some(stats.clone());
    Ok(())
}

/// Fits statistics on `train`, applies them to it and returns them for reuse
/// on the test split.
pub fn normalize(train: &mut Dataset) -> Result<Normalization> {
    let stats = fit_normalization(train)?;
    normalize_with(train, &stats)?;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Reflect padding before a random crop back to the original size.
    pub pad: usize,
    pub flip_prob: f32,
}

impl AugmentPolicy {
    pub const NONE: AugmentPolicy = AugmentPolicy {
        pad: 0,
        flip_prob: 0.0,
    };
    pub const CIFAR: AugmentPolicy = AugmentPolicy {
        pad: 4,
        flip_prob: 0.5,
    };

    pub fn is_identity(&self) -> bool {
        self.pad == 0 && self.flip_prob == 0.0
    }

    pub fn describe(&self) -> String {
        if self.is_identity() {
            "none".into()
        } else {
            format!("reflect-pad {} + random crop + hflip p={}", self.pad, self.flip_prob)
        }
    }
}

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    let r = if i < 0 {
        -i
    } else if i >= len {
        2 * len - 2 - i
    } else {
        i
    };
    r.clamp(0, len - 1) as usize
}

/// Random reflect-pad crop and horizontal flip, per image.
pub fn augment<R: Rng + ?Sized>(batch: &mut Tensor, rng: &mut R, policy: AugmentPolicy) {
    if policy.is_identity() {
        return;
    }
    let (n, c, h, w) = (batch.dim(0), batch.dim(1), batch.dim(2), batch.dim(3));
    let pad = policy.pad as isize;
    let mut scratch = vec![0.0f32; c * h * w];
    for img in 0..n {
        let dy = if pad > 0 { rng.random_range(0..=2 * pad as i64) as isize - pad } else { 0 };
        let dx = if pad > 0 { rng.random_range(0..=2 * pad as i64) as isize - pad } else { 0 };
        let flip = policy.flip_prob > 0.0 && rng.random::<f32>() < policy.flip_prob;
        let data = &mut batch.data_mut()[img * c * h * w..(img + 1) * c * h * w];
        scratch.copy_from_slice(data);
        for ch in 0..c {
            for y in 0..h {
                let sy = reflect(y as isize + dy, h);
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = reflect(xx as isize + dx, w);
                    data[(ch * h + y) * w + x] = scratch[(ch * h + sy) * w + sx];
                }
            }
        }
    }
}

/// Example indices for every batch of one epoch. The permutation is a function
/// of `(seed, epoch)`; the last partial batch is kept.
pub fn batches(
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    if shuffle {
        idx.shuffle(&mut rng::stream(seed, Stream::Shuffle, &[epoch as u64]));
    }
    Ok(idx.chunks(batch_size).map(|c| c.to_vec()).collect())
}
