//! Minimal reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! Define-by-run: a fresh [`Tape`] is built for every forward pass, ops
//! record themselves in creation order, and [`Tape::backward`] replays
//! them in strict reverse order, accumulating gradients additively.
//! Everything is 64-bit; every forward op checks its output for NaN/Inf
//! and errors instead of propagating.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::finite_diff_gradient;
pub use optim::{OptimizerKind, OptimizerState};
pub use tape::{sort_permutation, NodeId, Tape};
pub use tensor::Tensor;
