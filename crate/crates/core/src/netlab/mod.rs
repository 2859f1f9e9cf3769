//! Model definitions, losses and the gradient-reversal mechanism.
//!
//! The networks are small enough to run on a CPU, so they are implemented
//! directly: every layer records what it needs on a [`Tape`] during the
//! forward pass and produces input and parameter gradients on the way back.
//! All code is generic over [`Real`] so the same graph runs at 32-bit for
//! training and at 64-bit for gradient checks.

mod grl;
mod layers;
mod loss;
mod model;
mod objective;
mod optim;
mod tensor;

pub use grl::{gradient_reverse, GradientReversal, GrlConfig};
pub use layers::{BatchNorm, Conv1d, Dense, Grads, Layer, Mode, Sequential, Tape};
pub use loss::{
    bce_logits_loss, bce_logits_loss_grad, bce_loss, bce_loss_grad, ntxent_loss, ntxent_loss_grad,
    sigmoid, total_loss, DEFAULT_TEMPERATURE,
};
pub use model::{Collection, EncoderConfig, Model, ModelConfig, ModelState, NamedTensor};
pub use objective::{
    contrastive_objective, domain_objective, finetune_objective, ContrastiveOutcome, DomainOutcome,
    FinetuneBatch, FinetuneMode, FinetuneOutcome,
};
pub use optim::{Adam, AdamConfig, AdamState};
pub use tensor::Tensor3;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("contrastive loss needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("value outside the loss domain: {0}")]
    DomainError(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("state does not match the model: {0}")]
    StateMismatch(String),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

/// Floating-point element type of a graph.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

impl Real for f32 {}
impl Real for f64 {}
