//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape rebuilt on every forward pass. Operations evaluate
//! eagerly and append a node; [`Graph::backward`] sweeps the tape once in
//! reverse. Broadcasting is limited to scalar-against-tensor, plus the
//! row-bias add needed by affine layers.

mod gradcheck;
mod graph;
mod tensor;

use std::sync::atomic::{AtomicUsize, Ordering};

pub use gradcheck::finite_diff_check;
pub use graph::{BatchNormMode, BatchNormStats, BinaryKind, Gradients, Graph, ReduceKind, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite value at coordinate {coordinate}")]
    NonFinite { coordinate: usize },
}

static KERNEL_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Caps kernel-level parallelism. `1` (the default) keeps every kernel on
/// the calling thread.
pub fn set_kernel_threads(n: usize) {
    KERNEL_THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn kernel_threads() -> usize {
    KERNEL_THREADS.load(Ordering::Relaxed)
}
