//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! walks the record in reverse. Training runs in `f32`, gradient checks in
//! `f64`.

mod adam;
mod checkpoint;
pub mod conv;
mod gradcheck;
mod scalar;
mod suite;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{compare_gradients, gradcheck, GradReport, DEFAULT_STEP};
pub use scalar::{gemm, MatRef, Scalar};
pub use suite::{op_suite, SuiteEntry, SUITE_TOLERANCE};
pub use tape::{sigmoid, NormMode, RunningStats, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("batch normalization needs at least 2 samples in training mode")]
    DegenerateBatch,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("class index {index} out of range for {classes} classes")]
    Index { index: usize, classes: usize },
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AutodiffError {
    pub fn shape(msg: impl Into<String>) -> Self {
        Self::Shape(msg.into())
    }
}
