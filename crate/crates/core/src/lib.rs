//! Continual test-time adaptation over a self-contained micro network.
//!
//! The crate is organized around the adaptation loop:
//!
//! - [`tensor`]: row-major `f64` matrices, the only numeric container used.
//! - [`micronet`]: a dense+ReLU+BN network with manual, gradient-checked
//!   backpropagation and scoped SGD-with-momentum.
//! - [`dynbn`]: batch-norm statistics that interpolate between frozen source
//!   statistics and current-batch statistics, weighted by measured drift.
//! - [`replay`]: class-balanced exemplar memory and mixup interpolation.
//! - [`engine`]: the per-batch teacher/student adaptation step plus the
//!   frozen-source, per-batch-stats, and entropy-minimization baselines.
//! - [`streambench`]: domain-shift stream generation and accuracy/AMCA scoring.
//! - [`io`]: the `mnet-v1` binary container and CSV dataset formats.

pub mod dynbn;
pub mod engine;
pub mod error;
pub mod io;
pub mod micronet;
pub mod replay;
pub mod rng;
pub mod streambench;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor2D;
