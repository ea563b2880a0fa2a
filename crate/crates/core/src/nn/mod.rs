//! Reverse-mode differentiation and optimization kernel.
//!
//! Just enough machinery for the game agents: dense layers, pointwise
//! nonlinearities, softmax, a GRU cell, Bernoulli log-likelihoods and
//! entropies, RMSProp and a finite-difference gradient checker.

mod gradcheck;
mod gru;
pub mod kernels;
mod optim;
mod param;
mod tape;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, TensorCheck};
pub use gru::{gru_step, GruParams};
pub use optim::{rmsprop_update, RmsProp};
pub use param::{Gradients, ParamId, ParamStore, ParamTensor};
pub use tape::{
    bernoulli_entropy, bernoulli_log_prob, sigmoid, Activation, Tape, Var,
};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),
    #[error("invalid optimizer setting: {0}")]
    Config(String),
}
