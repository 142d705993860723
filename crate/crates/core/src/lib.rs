//! Note-event embeddings for symbolic music: MIDI ingestion, tokenization,
//! a hand-written neural core, the token and context models, and ranking
//! evaluation.

pub mod context;
pub mod eval;
pub mod midi;
pub mod nn;
pub mod scalar;
pub mod token_model;
pub mod tokenize;

pub use scalar::Scalar;

/// Double-precision parameter store, the default for training and checkpoints.
pub type Params = nn::ParamStore<f64>;
pub type Model = context::ContextModel<f64>;
pub type Model32 = context::ContextModel<f32>;
