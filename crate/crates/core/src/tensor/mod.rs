//! Dense matrices, loss terms with analytic gradients, and the Adam optimizer.

mod adam;
mod linalg;
mod loss;
mod matrix;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use linalg::{cholesky, spd_inverse};
pub use loss::{
    cosine_alignment_loss_grad, elastic_net_penalty_grad, mahalanobis_loss_grad,
    softmax_ce_loss_grad, ZeroColumn,
};
pub use matrix::{cosine, dot, l2_norm, Matrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("concept column {0} is zero after cubing")]
    DegenerateColumn(usize),
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
