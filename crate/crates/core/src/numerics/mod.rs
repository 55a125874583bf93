//! Dense f64 matrices with a per-step reverse-mode tape, Adam, and a
//! named-tensor checkpoint container.
//!
//! Every value on the tape is a 2-D matrix; scalars are 1×1. A [`Graph`] is
//! built for one training step, differentiated once with
//! [`Graph::backward`], and dropped.

mod checkpoint;
mod gradcheck;
mod params;
mod tape;

pub use checkpoint::{Checkpoint, CheckpointError, NamedTensor, CHECKPOINT_MAGIC};
pub use gradcheck::{check_gradients, GradCheck};
pub use params::{AdamConfig, LinearDecay, ParamId, ParameterStore};
pub use tape::{Grads, Graph, Var};

pub type Mat = ndarray::Array2<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<(usize, usize)> },
    #[error("{op}: {msg}")]
    Argument { op: &'static str, msg: String },
    #[error("non-finite gradient in {param} at index {index}: {value}")]
    NonFiniteGradient { param: String, index: usize, value: f64 },
    #[error("duplicate parameter {0}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}
