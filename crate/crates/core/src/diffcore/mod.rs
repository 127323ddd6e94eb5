//! Dense tensors, reverse-mode gradients, and the layers the world model
//! and agent are built from.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;


use thiserror::Error;

pub use gradcheck::{grad_check, op_suite, GradCheckReport, OpSuiteReport};
pub use graph::{log_softmax_groups, sample_groups, softmax_groups, Gradients, Graph, Var};
pub use nn::{GruCell, LayerNorm, Linear, Mlp};
pub use optim::{Adam, AdamConfig};
pub use params::ParamStore;
pub use tensor::{matmul, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
}
