//! Dense tensors, reverse-mode differentiation, layers and the AdamW optimizer.

pub mod adamw;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod params;
pub mod tensor;

pub use adamw::{AdamWConfig, AdamWState};
pub use graph::{Gradients, Graph, Var};
pub use params::{Initializer, Manifest, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<(usize, usize)>,
    },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("backward already ran on this graph")]
    BackwardTwice,
    #[error("gradients requested before backward")]
    NoBackward,
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
