//! Mixed-precision quantization-aware distillation toolkit.
//!
//! Group quantization to ternary, 4-bit and 8-bit codes, periodic
//! per-channel bit allocation, packed storage, a factorized integer matmul,
//! distillation losses, a discrepancy analyzer for allocation layouts and a
//! small training harness that ties them together.

pub mod alloc_analysis;
pub mod cli;
pub mod compression;
pub mod container;
pub mod eakld;
pub mod error;
pub mod fixtures;
pub mod lafd;
pub mod layout;
pub mod manifest;
pub mod matrix;
pub mod mpgemm;
pub mod packing;
pub mod quantizer;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::{DenseMatrix, Matrix, Real};
