//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded eagerly on a [`Tape`]: every op computes its value
//! immediately and appends a node whose parents precede it, so the node list is
//! already in topological order. [`Tape::backward`] walks the list once in
//! reverse and accumulates vector-Jacobian products.
//!
//! The primitive set is deliberately small: what dense MLP policies, value
//! networks and clipped surrogate objectives need, nothing more.

mod adam;
pub(crate) mod kernels;
mod nn;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use nn::Mlp;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
