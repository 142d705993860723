//! Small deterministic network engine with hand-written backward passes.

mod attention;
mod checkpoint;
mod dense;
mod embedding;
mod encoding;
mod gradcheck;
mod gru;
mod loss;
mod params;
mod tensor;

pub use attention::{Attention, AttentionCache};
pub use checkpoint::{read_prm, write_prm, PRM_MAGIC, PRM_VERSION};
pub use dense::{Activation, Dense, DenseCache};
pub use embedding::Embedding;
pub use encoding::sinusoidal_encode;
pub use gradcheck::{gradient_check, GradCheckConfig};
pub use gru::{GruCell, GruStack, GruStackCache};
pub use loss::bce_multilabel;
pub use params::{AdamConfig, Grads, ParamId, ParamStore};
pub use tensor::Tensor;

pub(crate) use tensor::{add_assign, dot, sigmoid};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("index {index} out of range for table of {size} rows")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("sinusoidal encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
