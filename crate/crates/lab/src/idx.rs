//! IDX containers (MNIST, Fashion-MNIST): big-endian header, `u8` payload.

use std::path::Path;

use ofa_core::data::{Dataset, DatasetId, Split};
use ofa_core::Tensor;

use crate::error::{LabError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| LabError::format(path, offset as u64, "truncated header"))
}

/// Parses an image file. Returns `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(LabError::format(
            path,
            0,
            format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| LabError::format(path, 4, "dimensions overflow"))?;
    let payload = &bytes[16..];
    if payload.len() != need {
        return Err(LabError::format(
            path,
            16 + payload.len().min(need) as u64,
            format!("header declares {need} pixel bytes, file has {}", payload.len()),
        ));
    }
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(LabError::format(
            path,
            0,
            format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(LabError::format(
            path,
            8 + payload.len().min(n) as u64,
            format!("header declares {n} labels, file has {}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

/// Encodes images and labels as IDX files (used to build fixtures).
pub fn encode(rows: usize, cols: usize, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [LABEL_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}

/// Builds a dataset from raw IDX bytes; pixels are scaled to `[0, 1]`.
pub fn decode(
    image_bytes: &[u8],
    image_path: &Path,
    label_bytes: &[u8],
    label_path: &Path,
    id: DatasetId,
    split: Split,
) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_images(image_bytes, image_path)?;
    let labels = parse_labels(label_bytes, label_path)?;
    if labels.len() != n {
        return Err(LabError::format(
            label_path,
            4,
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    let (c, h, w) = id.image_shape();
    if c != 1 || (rows, cols) != (h, w) {
        return Err(LabError::format(
            image_path,
            8,
            format!("images are {rows}x{cols}, {} expects {h}x{w}", id.name()),
        ));
    }
    let data: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let images = Tensor::from_vec(&[n, 1, rows, cols], data)?;
    let classes = id.class_count();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= classes) {
        return Err(LabError::format(
            label_path,
            8 + pos as u64,
            format!("label {} outside [0, {classes})", labels[pos]),
        ));
    }
    Ok(Dataset::new(
        id,
        split,
        images,
        labels.into_iter().map(u16::from).collect(),
    )?)
}

pub fn load_idx(images: &Path, labels: &Path, id: DatasetId, split: Split) -> Result<Dataset> {
    let ib = std::fs::read(images).map_err(|e| LabError::io(images, e))?;
    let lb = std::fs::read(labels).map_err(|e| LabError::io(labels, e))?;
    decode(&ib, images, &lb, labels, id, split)
}
