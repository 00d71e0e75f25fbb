//! Weight-sharing elastic supernet training.
//!
//! The crate holds everything that is pure computation: CPU tensor kernels with
//! hand-derived gradients, the shared-weight supernet and its subnet derivation,
//! the subnet selection schemes together with the training loop that runs them,
//! MAC accounting and MFLOP-binned population evaluation.
//!
//! It builds without `std` (an allocator is required). File formats, the CLI
//! and wall-clock timing live in the companion `ofa-lab` crate.
//!
//! FLOP convention: one FLOP is one multiply-accumulate. `count_macs` returns an
//! exact integer MAC count and MFLOPs are `macs / 1e6`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod arch;
pub mod data;
mod error;
pub mod eval;
pub mod flops;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod schemes;
pub mod supernet;
pub mod tensor;
pub mod train;

pub use arch::{population_size, ArchSpec, SubnetConfig};
pub use error::{Error, Result};
pub use eval::{evaluate_population, EvalSettings, PopulationReport};
pub use flops::{count_macs, mflops};
pub use schemes::{SchemeKind, SchemeSpec, SchemeState};
pub use supernet::{build_supernet, SupernetParams};
pub use tensor::{Param, Tensor};
pub use train::{train_run, TrainConfig};
