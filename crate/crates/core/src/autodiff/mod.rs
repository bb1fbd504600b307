//! Reverse-mode automatic differentiation over dense 2-D tensors, with the
//! small set of neural building blocks the grasping model needs.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod nn;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, RngState};
pub use gradcheck::{compare_gradients, grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use nn::{Activation, Mlp, MlpSpec, MlpVars, Parameters, PointNet, POINTNET_WIDTHS};
pub use tensor::{matmul, Tensor};

pub(crate) use tensor::gemm_row;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid layer specification: {0}")]
    Spec(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
