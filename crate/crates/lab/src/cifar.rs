//! CIFAR binary batches: CIFAR-10 records are `label, 3072 pixels`; CIFAR-100
//! records are `coarse, fine, 3072 pixels` and the fine label is used.

use std::path::Path;

use ofa_core::data::{Dataset, DatasetId, Split};
use ofa_core::Tensor;

use crate::error::{LabError, Result};

pub const PIXELS: usize = 3 * 32 * 32;

pub fn record_len(id: DatasetId) -> Result<usize> {
    match id {
        DatasetId::Cifar10 => Ok(1 + PIXELS),
        DatasetId::Cifar100 => Ok(2 + PIXELS),
        other => Err(LabError::Usage(format!("{} is not a CIFAR dataset", other.name()))),
    }
}

/// Labels and raw channel-major pixels of every record in `bytes`.
pub fn parse(bytes: &[u8], path: &Path, id: DatasetId) -> Result<(Vec<u8>, Vec<u8>)> {
    let rec = record_len(id)?;
    if bytes.len() % rec != 0 {
        let whole = bytes.len() / rec * rec;
        return Err(LabError::format(
            path,
            whole as u64,
            format!(
                "file length {} is not a multiple of the {rec}-byte record size",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let classes = id.class_count();
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let label = r[rec - PIXELS - 1];
        if label as usize >= classes {
            return Err(LabError::format(
                path,
                (i * rec + rec - PIXELS - 1) as u64,
                format!("label {label} outside [0, {classes})"),
            ));
        }
        labels.push(label);
        pixels.extend_from_slice(&r[rec - PIXELS..]);
    }
    Ok((labels, pixels))
}

/// Encodes records in the on-disk layout. `coarse` is only used for CIFAR-100.
pub fn encode(id: DatasetId, labels: &[u8], coarse: &[u8], pixels: &[u8]) -> Result<Vec<u8>> {
    let rec = record_len(id)?;
    let mut out = Vec::with_capacity(labels.len() * rec);
    for (i, &l) in labels.iter().enumerate() {
        if id == DatasetId::Cifar100 {
            out.push(coarse.get(i).copied().unwrap_or(0));
        }
        out.push(l);
        out.extend_from_slice(&pixels[i * PIXELS..(i + 1) * PIXELS]);
    }
    Ok(out)
}

pub fn decode(files: &[(&Path, &[u8])], id: DatasetId, split: Split) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for (path, bytes) in files {
        let (l, p) = parse(bytes, path, id)?;
        labels.extend(l);
        pixels.extend(p);
    }
    let n = labels.len();
    let data: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let images = Tensor::from_vec(&[n, 3, 32, 32], data)?;
    Ok(Dataset::new(
        id,
        split,
        images,
        labels.into_iter().map(u16::from).collect(),
    )?)
}

pub fn load_cifar(paths: &[&Path], id: DatasetId, split: Split) -> Result<Dataset> {
    let contents: Vec<Vec<u8>> = paths
        .iter()
        .map(|p| std::fs::read(p).map_err(|e| LabError::io(*p, e)))
        .collect::<Result<_>>()?;
    let files: Vec<(&Path, &[u8])> = paths
        .iter()
        .zip(&contents)
        .map(|(p, c)| (*p, c.as_slice()))
        .collect();
    decode(&files, id, split)
}
