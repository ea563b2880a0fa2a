//! Sender and receiver networks.

mod receiver;
mod sender;

pub use receiver::{Candidates, PreparedCandidates, ReceiverAgent, ReceiverAttention, ReceiverState};
pub use sender::{PreparedView, SenderAgent, SenderAttention, SenderOutput};

use serde::{Deserialize, Serialize};

use crate::nn::NnError;

/// Layer sizes and variant switches for both agents and the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub message_dim: usize,
    pub sender_dim: usize,
    pub sender_set_size: usize,
    pub receiver_dim: usize,
    pub embed_dim: usize,
    pub sender_hidden: usize,
    pub sender_attention: bool,
    pub sender_attention_hidden: usize,
    pub memory_size: usize,
    pub receiver_message_hidden: usize,
    pub receiver_attention: bool,
    pub receiver_attention_hidden: usize,
    pub baseline_hidden: usize,
}

impl ModelConfig {
    /// Reference layer sizes for the given input dimensions.
    pub fn new(message_dim: usize, sender_dim: usize, receiver_dim: usize) -> Self {
        Self {
            message_dim,
            sender_dim,
            sender_set_size: 1,
            receiver_dim,
            embed_dim: 256,
            sender_hidden: 256,
            sender_attention: false,
            sender_attention_hidden: 256,
            memory_size: 64,
            receiver_message_hidden: 64,
            receiver_attention: false,
            receiver_attention_hidden: 64,
            baseline_hidden: 500,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let sizes = [
            ("message_dim", self.message_dim),
            ("sender_dim", self.sender_dim),
            ("sender_set_size", self.sender_set_size),
            ("receiver_dim", self.receiver_dim),
            ("embed_dim", self.embed_dim),
            ("sender_hidden", self.sender_hidden),
            ("sender_attention_hidden", self.sender_attention_hidden),
            ("memory_size", self.memory_size),
            ("receiver_message_hidden", self.receiver_message_hidden),
            ("receiver_attention_hidden", self.receiver_attention_hidden),
            ("baseline_hidden", self.baseline_hidden),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(NnError::Config(format!("{name} must be positive")));
        }
        if self.sender_set_size > 1 && !self.sender_attention {
            return Err(NnError::Config(format!(
                "sender views hold {} vectors; pooled sender needs exactly one (enable sender_attention)",
                self.sender_set_size
            )));
        }
        Ok(())
    }
}
