//! MFLOP-binned population evaluation with per-subnet BN recalibration.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::flops::{count_macs, mflops};
use crate::ops::BatchStats;
use crate::rng::{stream, Rng, Stream};
use crate::supernet::SubnetView;
use crate::{ArchSpec, Error, Result, SubnetConfig, SupernetParams, Tensor};

pub const DEFAULT_BINS: [f64; 6] = [4.0, 6.0, 8.0, 10.0, 12.0, 14.0];
pub const DEFAULT_TOL: f64 = 0.5;
pub const DEFAULT_MAX_TRIES: usize = 10_000;
pub const DEFAULT_N_PER_BIN: usize = 10;
pub const DEFAULT_CALIBRATION_IMAGES: usize = 2048;

/// Bins whose subnets have every width entry locked to the smallest and to the
/// largest choice respectively.
pub const LOW_LOCK_BIN: f64 = 4.0;
pub const HIGH_LOCK_BIN: f64 = 14.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub bins: Vec<f64>,
    pub n_per_bin: usize,
    pub tol: f64,
    pub max_tries: usize,
    pub calibrate: bool,
    pub calibration_images: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            bins: DEFAULT_BINS.to_vec(),
            n_per_bin: DEFAULT_N_PER_BIN,
            tol: DEFAULT_TOL,
            max_tries: DEFAULT_MAX_TRIES,
            calibrate: true,
            calibration_images: DEFAULT_CALIBRATION_IMAGES,
            batch_size: 256,
            seed: 0,
        }
    }
}

/// Width every entry is locked to when sampling for `target`, if any.
pub fn width_lock(arch: &ArchSpec, target: f64) -> Option<usize> {
    if (target - LOW_LOCK_BIN).abs() < 1e-9 {
        arch.width_choices.iter().copied().min()
    } else if (target - HIGH_LOCK_BIN).abs() < 1e-9 {
        arch.width_choices.iter().copied().max()
    } else {
        None
    }
}

/// Rejection-samples a uniform subnet whose MFLOPs lie within `tol` of
/// `target`, applying the width lock of the extreme bins.
pub fn sample_in_bin(
    arch: &ArchSpec,
    target: f64,
    tol: f64,
    rng: &mut Rng,
    max_tries: usize,
) -> Result<SubnetConfig> {
    let lock = width_lock(arch, target);
    for _ in 0..max_tries {
        let mut cfg = SubnetConfig::sample(arch, rng);
        if let Some(w) = lock {
            cfg.width.iter_mut().for_each(|x| *x = w);
        }
        let m = mflops(count_macs(&cfg, arch)?);
        if (m - target).abs() <= tol {
            return Ok(cfg);
        }
    }
    Err(Error::Sampling {
        target,
        tol,
        tries: max_tries,
    })
}

/// Per-subnet BN statistics: the cumulative average of the batch statistics
/// of every calibration batch, in dataset order. Weights are not touched.
pub fn calibrate_bn(
    net: &SupernetParams,
    cfg: &SubnetConfig,
    calib: &Dataset,
    batch_size: usize,
) -> Result<Vec<BatchStats>> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let view = net.derive_subnet(cfg)?;
    let mut sums: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut count = 0usize;
    let indices: Vec<usize> = (0..calib.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, _) = calib.gather(chunk);
        let stats = view.batch_statistics(&x)?;
        if sums.is_empty() {
            sums = stats
                .iter()
                .map(|s| (vec![0.0; s.mean.len()], vec![0.0; s.var.len()]))
                .collect();
        }
        for ((m, v), s) in sums.iter_mut().zip(&stats) {
            m.iter_mut().zip(&s.mean).for_each(|(a, &b)| *a += b as f64);
            v.iter_mut().zip(&s.var).for_each(|(a, &b)| *a += b as f64);
        }
        count += 1;
    }
    let n = count as f64;
    Ok(sums
        .into_iter()
        .map(|(m, v)| BatchStats {
            mean: m.into_iter().map(|x| (x / n) as f32).collect(),
            var: v.into_iter().map(|x| (x / n) as f32).collect(),
        })
        .collect())
}

/// Index of the largest logit per row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.dim(1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Top-1 accuracy of `view` on `data` with its current running statistics.
pub fn accuracy(view: &SubnetView, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = data.gather(chunk);
        let logits = view.forward_eval(&x)?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&labels)
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationEntry {
    pub bin_mflops: f64,
    pub subnet_index: usize,
    pub config: SubnetConfig,
    pub config_hash: String,
    pub exact_mflops: f64,
    pub params: usize,
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin_mflops: f64,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub entries: Vec<PopulationEntry>,
    pub bins: Vec<BinSummary>,
    pub overall_mean: f64,
    pub seed: u64,
    pub tol: f64,
    pub calibrated: bool,
    pub calibration_images: usize,
}

impl PopulationReport {
    /// Mean over bins of the per-bin mean accuracy.
    pub fn mean_over_bins(&self) -> f64 {
        if self.bins.is_empty() {
            return 0.0;
        }
        self.bins.iter().map(|b| b.mean).sum::<f64>() / self.bins.len() as f64
    }

    /// Largest minus smallest per-bin mean accuracy.
    pub fn bin_spread(&self) -> f64 {
        let means = self.bins.iter().map(|b| b.mean);
        let max = means.clone().fold(f64::NEG_INFINITY, f64::max);
        let min = means.fold(f64::INFINITY, f64::min);
        if self.bins.is_empty() {
            0.0
        } else {
            max - min
        }
    }

    pub fn bin(&self, target: f64) -> Option<&BinSummary> {
        self.bins.iter().find(|b| (b.bin_mflops - target).abs() < 1e-9)
    }
}

fn summarize(bin: f64, accs: &[f64]) -> BinSummary {
    let n = accs.len().max(1) as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    BinSummary {
        bin_mflops: bin,
        count: accs.len(),
        mean,
        min: accs.iter().copied().fold(f64::INFINITY, f64::min),
        max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        stddev: libm::sqrt(var),
    }
}

/// Samples `n_per_bin` subnets per bin, recalibrates BN (when enabled) and
/// measures top-1 on the whole test set. The supernet is only read.
pub fn evaluate_population(
    net: &SupernetParams,
    settings: &EvalSettings,
    test: &Dataset,
    calib: Option<&Dataset>,
) -> Result<PopulationReport> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let calib = if settings.calibrate {
        Some(calib.ok_or(Error::Empty("calibration set"))?)
    } else {
        None
    };
    let arch = &net.arch;
    let mut entries = Vec::new();
    let mut bins = Vec::new();
    for (b, &target) in settings.bins.iter().enumerate() {
        let mut accs = Vec::with_capacity(settings.n_per_bin);
        for i in 0..settings.n_per_bin {
            let mut rng = stream(settings.seed, Stream::Eval, &[b as u64, i as u64]);
            let cfg = sample_in_bin(arch, target, settings.tol, &mut rng, settings.max_tries)?;
            let mut view = net.derive_subnet(&cfg)?;
            if let Some(c) = calib {
                let stats = calibrate_bn(net, &cfg, c, settings.batch_size)?;
                view.set_running_stats(&stats)?;
            }
            let top1 = accuracy(&view, test, settings.batch_size)?;
            accs.push(top1);
            entries.push(PopulationEntry {
                bin_mflops: target,
                subnet_index: i,
                config_hash: cfg.hash_hex(),
                exact_mflops: mflops(count_macs(&cfg, arch)?),
                params: net.subnet_parameter_count(&cfg)?,
                config: cfg,
                top1,
            });
        }
        bins.push(summarize(target, &accs));
    }
    let overall_mean = if entries.is_empty() {
        0.0
    } else {
        entries.iter().map(|e| e.top1).sum::<f64>() / entries.len() as f64
    };
    Ok(PopulationReport {
        entries,
        bins,
        overall_mean,
        seed: settings.seed,
        tol: settings.tol,
        calibrated: calib.is_some(),
        calibration_images: calib.map_or(0, |c| c.len()),
    })
}

/// Human-readable one-line bin summary.
pub fn format_bin(b: &BinSummary) -> String {
    format!(
        "{:>5.1} MFLOPs  n={:<3} mean={:.4} min={:.4} max={:.4} sd={:.4}",
        b.bin_mflops, b.count, b.mean, b.min, b.max, b.stddev
    )
}
