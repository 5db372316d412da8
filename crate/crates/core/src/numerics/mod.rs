//! Dense tensors, a reverse-mode tape, gradient checking, Adam and the
//! checkpoint container.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("no gradient supplied for parameter {0}")]
    MissingGradient(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("concatenation of zero tensors")]
    EmptyConcat,
}

impl NumericError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NumericError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
