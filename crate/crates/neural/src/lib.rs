//! A small decoder-only transformer over REMI token ids with relative
//! position bias and composer-conditioned bottleneck adapters. Everything is
//! computed in `f64` with hand-written backward passes.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod optim;
pub mod params;
pub mod sampling;
pub mod synth;
pub mod toy;

use thiserror::Error;

pub use config::{ModelConfig, SamplerConfig, Schedule};
pub use model::{Model, Sequence};
pub use optim::{TrainState, ADAPTER_CLIP, MAIN_CLIP};
pub use sampling::{choice_count, sample, ChoiceSummary};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds the context of {context}")]
    ContextOverflow { len: usize, context: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u32),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch contains no non-pad targets")]
    AllPadBatch,
    #[error("loss is not finite at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("primer has {bars} complete bars, need at least 4")]
    PrimerTooShort { bars: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
