//! Continuous-time decision transformer.
//!
//! Each step contributes four tokens (RTG, OBS, DEC, WAIT). A token's input
//! embedding is the concatenation `[temporal(t) ; W_type · value + b_type ;
//! type_emb[type]]`, followed by post-norm causal self-attention blocks.
//! Decision logits are read at each OBS token, the wait prediction at each
//! DEC token.
//!
//! Windows shorter than `K` are not padded: a left-padded sequence with the
//! pad positions masked out produces the same outputs at every real position.

mod embed;
mod layer;
mod model;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;
use crate::io::JsonlError;

pub use embed::{temporal_embedding, tokenize, Token, TokenSeq, TokenType};
pub use layer::{attention_layer, LayerCache};
pub use model::{
    forward, forward_tokens, loss_and_grad, loss_continuous, loss_discrete, predict_action, ContextStep,
    ForwardOutput, Prediction,
};
pub use params::{LayerParams, SequenceModelParams};
pub use train::{train, window_context, TrainConfig, TrainedModel};

#[derive(Debug, Error)]
pub enum SeqModelError {
    #[error("window has no steps")]
    EmptyWindow,
    #[error("window of {len} steps exceeds context length {k}")]
    WindowTooLong { len: usize, k: usize },
    #[error("step {0} is incomplete but is not the last step of the window")]
    IncompleteStep(usize),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("model file and its config sidecar disagree: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Sidecar(#[from] JsonlError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    #[default]
    Discrete,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub d_time: usize,
    pub d_value: usize,
    pub d_type: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub obs_dim: usize,
    pub n_decisions: usize,
    pub action_mode: ActionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 20,
            d_time: 32,
            d_value: 64,
            d_type: 32,
            n_layers: 3,
            n_heads: 4,
            d_ff: 256,
            c: 10000.0,
            obs_dim: 21,
            n_decisions: 3,
            action_mode: ActionMode::Discrete,
        }
    }
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        self.d_time + self.d_value + self.d_type
    }

    pub fn head_dim(&self) -> usize {
        self.d_model() / self.n_heads.max(1)
    }

    /// Width of the DEC token's value vector and of the decision head.
    pub fn action_dim(&self) -> usize {
        match self.action_mode {
            ActionMode::Discrete => self.n_decisions,
            ActionMode::Continuous => 1,
        }
    }

    pub fn validate(&self) -> Result<(), SeqModelError> {
        let bad = |m: &str| Err(SeqModelError::InvalidConfig(m.to_string()));
        if self.k == 0 {
            return bad("K must be at least 1");
        }
        if self.n_heads == 0 || self.d_model() % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("C must be positive");
        }
        if self.d_value == 0 || self.d_type == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return bad("d_value, d_type, d_ff and n_layers must be positive");
        }
        if self.obs_dim == 0 {
            return bad("obs_dim must be positive");
        }
        if self.n_decisions < 2 {
            return bad("n_decisions must be at least 2");
        }
        Ok(())
    }
}
