//! Cycle-approximate simulator for a flexible sparse/dense systolic-array
//! GEMM accelerator.
//!
//! The crate is organized bottom-up:
//!
//! - [`matrix`]: dense `f32` matrices, the reference GEMM, seeded generators.
//! - [`io`]: FSMX binary and CSV matrix files.
//! - [`formats`]: CSR, CSC, COO, RLE-4, bitmap, two-stage bitmap and CSB
//!   encodings with footprint accounting.
//! - [`lowering`]: im2col lowering of CONV/FC operators and tiling.
//! - [`sim`]: the systolic-array model and its seven dataflows.
//! - [`pruning`]: structured l2-norm vector pruning and the sparsity schedule.
//! - [`dse`]: design-space exploration over array shapes, dataflows and
//!   pruning parameters.

pub mod dse;
pub mod error;
pub mod formats;
pub mod io;
pub mod lowering;
pub mod matrix;
pub mod pruning;
pub mod sim;

pub use error::{Error, Result};
pub use matrix::{gemm_ref, measure_sparsity, random_dense, random_sparse, DenseMatrix, SeededRng, Sparsity};
