//! Minimal reverse-mode autodiff and the policy/value network built on it.

pub mod checkpoint;
mod matrix;
mod optim;
mod params;
mod policy;
mod tape;

pub use matrix::Matrix;
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore, Tensor};
pub use policy::{
    ActionSelection, NetConfig, PolicyInput, PolicyNet, PolicyOutput, PolicyStep, RecurrentState, PAIR_COUNT,
};
pub use tape::{stable_sigmoid, Tape, Var, MASK_LOGIT};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("backward called without a recorded forward pass")]
    NoForward,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
