//! Synthetic datasets and small run configs for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ofa_core::data::DatasetId;
use ofa_core::schemes::Method;
use ofa_core::{count_macs, mflops, ArchSpec, SubnetConfig};
use ofa_lab::config::ExperimentConfig;
use ofa_lab::{cifar, idx};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Class `l` lights a 6x6 patch whose position depends on `l`, over noise.
pub fn mnist_like(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0u8; n * 784];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let l = rng.random_range(0..10u8);
        labels.push(l);
        let img = &mut pixels[i * 784..(i + 1) * 784];
        for p in img.iter_mut() {
            *p = rng.random_range(0..60);
        }
        let (r0, c0) = (2 + (l as usize / 5) * 14, 2 + (l as usize % 5) * 5);
        for r in r0..r0 + 6 {
            for c in c0..c0 + 4 {
                img[r * 28 + c] = rng.random_range(180..=255);
            }
        }
    }
    (pixels, labels)
}

/// Writes MNIST-layout IDX files under `root/mnist`.
pub fn write_mnist(root: &Path, train: usize, test: usize, seed: u64) {
    let dir = root.join("mnist");
    std::fs::create_dir_all(&dir).unwrap();
    for (stem, n, s) in [("train", train, seed), ("t10k", test, seed + 1)] {
        let (pixels, labels) = mnist_like(n, s);
        let (img, lab) = idx::encode(28, 28, &pixels, &labels);
        std::fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), img).unwrap();
        std::fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), lab).unwrap();
    }
}

pub fn cifar_like(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..n).map(|_| rng.random_range(0..10u8)).collect();
    let pixels = (0..n * cifar::PIXELS).map(|_| rng.random()).collect();
    (labels, pixels)
}

pub fn small_arch() -> ArchSpec {
    ArchSpec {
        num_blocks: 2,
        max_depth: 3,
        stem_channels: 4,
        stem_padding: 1,
        block_out_channels: vec![4, 8],
        block_strides: vec![2, 2],
        depth_choices: vec![1, 2, 3],
        ..ArchSpec::grayscale28()
    }
}

/// Two bins spanning the small arch's range, tolerance wide enough to reach.
pub fn small_bins() -> (Vec<f64>, f64) {
    let a = small_arch();
    let lo = mflops(count_macs(&SubnetConfig::all_min(&a), &a).unwrap());
    let hi = mflops(count_macs(&SubnetConfig::all_max(&a), &a).unwrap());
    let q = (hi - lo) / 4.0;
    (vec![lo + q, hi - q], q)
}

/// A few-second run of `method` on the synthetic data.
pub fn small_config(method: Method, seed: u64, out: &Path, data: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(method, DatasetId::Mnist);
    c.seed = seed;
    c.out_dir = out.to_path_buf();
    c.data_root = Some(data.to_path_buf());
    c.arch = Some(small_arch());
    c.train.batch_size = 16;
    c.train.epochs = Some(if method == Method::OfaPs { 4 } else { 2 });
    c.train.augment = false;
    let (bins, tol) = small_bins();
    c.eval.bins = bins;
    c.eval.tol = tol;
    c.eval.n_per_bin = 2;
    c.eval.calibration_images = 32;
    c.eval.batch_size = 32;
    c
}

pub fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

pub fn fixture_root(dir: &Path) -> PathBuf {
    let root = dir.join("data");
    write_mnist(&root, 96, 48, 11);
    root
}
