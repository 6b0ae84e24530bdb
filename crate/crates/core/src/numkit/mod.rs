//! Numeric substrate: dense `f64` tensors, a reverse-mode tape, seeded
//! samplers, Adam, finite-difference gradient checking and checkpoints.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
pub mod random;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, StoredParam, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{grad_check, grad_check_sampled, rel_err, GradCheckReport, FD_STEP, REL_ERR_FLOOR};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{Bindings, ParamStore};
pub use random::{sample_gaussian, sample_gumbel};
pub use tape::{Gradients, Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    BadAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of range (len {len})")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a scalar output, got shape {shape:?}")]
    NonScalar { shape: Vec<usize> },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
