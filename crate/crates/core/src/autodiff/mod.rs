//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only tape. Every operator appends one node that
//! stores its forward value plus whatever the backward rule needs (argmax
//! indices, BCE targets). Because inputs always precede consumers, a single
//! sweep in reverse insertion order visits each node exactly once.
//!
//! Parameters are added with [`Graph::param`], which borrows the tensor for
//! the lifetime of the graph, so building one graph per batch does not copy
//! the model weights.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use graph::{bce_logit, sigmoid, Gradients, Graph, Var};
pub use kernels::MatmulPrecision;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
