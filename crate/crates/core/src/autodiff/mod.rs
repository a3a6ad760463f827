//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! The operator set is exactly what the point-cloud classifiers need:
//! matmul, broadcasting add/sub/mul, relu, softmax, max/mean/sum reductions,
//! row gather, concat, batch norm and softmax cross-entropy.

pub mod checkpoint;
mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{BatchStats, Graph, Mode, Var, BN_EPS};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{Param, ParamStore};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: non-finite input")]
    NonFiniteInput { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { op: &'static str, axis: usize, rank: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
