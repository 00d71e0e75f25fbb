//! Dataset root layout:
//!
//! ```text
//! <root>/mnist/{train,t10k}-images-idx3-ubyte, {train,t10k}-labels-idx1-ubyte
//! <root>/fmnist/ (same names as mnist)
//! <root>/cifar10/data_batch_{1..5}.bin, test_batch.bin
//! <root>/cifar100/train.bin, test.bin
//! ```

use std::path::{Path, PathBuf};

use ofa_core::data::{fit_normalization, normalize_with, Dataset, DatasetId, Normalization, Split};

use crate::cifar::load_cifar;
use crate::error::{LabError, Result};
use crate::idx::load_idx;

pub const DATA_ROOT_ENV: &str = "OFA_DATA_ROOT";

/// Explicit root, else `$OFA_DATA_ROOT`, else `./data`.
pub fn resolve_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("data"),
    }
}

pub fn split_files(root: &Path, id: DatasetId, split: Split) -> Vec<PathBuf> {
    let dir = root.join(id.name());
    match (id, split) {
        (DatasetId::Mnist | DatasetId::FashionMnist, s) => {
            let stem = if s == Split::Train { "train" } else { "t10k" };
            vec![
                dir.join(format!("{stem}-images-idx3-ubyte")),
                dir.join(format!("{stem}-labels-idx1-ubyte")),
            ]
        }
        (DatasetId::Cifar10, Split::Train) => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .collect(),
        (DatasetId::Cifar10, Split::Test) => vec![dir.join("test_batch.bin")],
        (DatasetId::Cifar100, Split::Train) => vec![dir.join("train.bin")],
        (DatasetId::Cifar100, Split::Test) => vec![dir.join("test.bin")],
    }
}

pub fn load_split(root: &Path, id: DatasetId, split: Split) -> Result<Dataset> {
    let files = split_files(root, id, split);
    if let Some(missing) = files.iter().find(|p| !p.is_file()) {
        return Err(LabError::io(
            missing,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
        ));
    }
    match id {
        DatasetId::Mnist | DatasetId::FashionMnist => load_idx(&files[0], &files[1], id, split),
        _ => {
            let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
            load_cifar(&refs, id, split)
        }
    }
}

/// Train and test splits, both normalised with statistics of the full
/// training split (or with `stats` when given).
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub normalization: Normalization,
}

pub fn prepare(root: &Path, id: DatasetId, stats: Option<&Normalization>) -> Result<Prepared> {
    let mut train = load_split(root, id, Split::Train)?;
    let mut test = load_split(root, id, Split::Test)?;
    let normalization = match stats {
        Some(s) => s.clone(),
        None => fit_normalization(&train)?,
    };
    normalize_with(&mut train, &normalization)?;
    normalize_with(&mut test, &normalization)?;
    log::info!(
        "{}: {} train / {} test examples from {}",
        id.name(),
        train.len(),
        test.len(),
        root.display()
    );
    Ok(Prepared {
        train,
        test,
        normalization,
    })
}
