//! Minimal reverse-mode differentiation for the fixed classifier graph.

mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CheckpointEntry};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, FD_EPSILON};
pub use params::{uniform_fan_in, Gradients, Param, ParamId, ParamSet};
pub use tape::{NodeId, Tape};
pub use tensor::{softmax, Tensor};


use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation produced by {0}")]
    NonFiniteActivation(&'static str),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("sequence of {rows} rows is too short (need at least {needed})")]
    SequenceTooShort { rows: usize, needed: usize },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
