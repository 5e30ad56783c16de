//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Graph`] records primitive operations as they are applied (eager
//! forward evaluation onto a tape), then [`Graph::backprop`] walks the tape
//! in reverse to populate gradients. Gradient accumulation happens in fixed
//! node-index order, so identical inputs produce bitwise-identical gradient
//! tables across runs.
//!
//! The op set is exactly what the encoder and its heads need, plus the
//! gradient-reversal operator: identity in the forward pass, `-lambda` times
//! the upstream gradient in the backward pass.

mod check;
mod graph;
mod tensor;

pub use check::finite_diff_check;
pub use graph::{Gradients, Graph, NodeId, Op};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by graph construction and backpropagation.
#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: String, detail: String },
    #[error("{op}: produced or received a non-finite value")]
    NonFinite { op: String },
    #[error("{op}: invalid operand: {detail}")]
    InvalidOperand { op: String, detail: String },
    #[error("grad-reverse: lambda must be nonnegative, got {lambda}")]
    NegativeLambda { lambda: f32 },
    #[error("backprop: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("node {index} does not belong to this graph (len {len})")]
    UnknownNode { index: usize, len: usize },
    #[error("finite_diff_check: eps {eps} outside [1e-5, 1e-2]")]
    InvalidEps { eps: f32 },
}
