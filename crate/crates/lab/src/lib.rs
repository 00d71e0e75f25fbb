//! File formats, experiment configuration and run management for `ofa-core`.
//!
//! The `ofa` binary exposes `train`, `eval`, `compare`, `flops`,
//! `population-size` and `schemes`.

pub mod checkpoint;
pub mod cifar;
pub mod compare;
pub mod config;
pub mod datasets;
pub mod error;
pub mod idx;
pub mod run;

pub use error::{LabError, Result};
