//! Mask-filling backend contract.
//!
//! A backend tokenizes surfaces, returns per-mask log-probabilities for
//! queried tokens, exports its static embedding table and optionally answers
//! free-text prompts. [`MockOracle`] is an in-process implementation for
//! tests; [`WireClient`] talks to an external process over the line protocol
//! in [`wire`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::prompt::Segment;
use crate::pseudoword::EmbeddingTable;

pub mod mock;
pub mod wire;

pub use mock::MockOracle;
pub use wire::{serve_connection, ServeOptions, WireClient};

/// First message of every session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub name: String,
    pub vocab_size: usize,
    pub dimension: usize,
    pub cased: bool,
    pub mask_token: String,
    #[serde(default)]
    pub supports_complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub text: String,
}

/// Pseudoword vectors keyed by placeholder id; sent inline with prompts.
pub type PseudoVectors = BTreeMap<String, Vec<f64>>;

/// Per-mask log-probabilities over queried token strings.
pub type MaskLogprobs = Vec<BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobsRequest {
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pseudowords: PseudoVectors,
    /// One token list per mask, in prompt order.
    pub queries: Vec<Vec<String>>,
}

impl LogprobsRequest {
    pub fn mask_count(&self) -> usize {
        self.segments.iter().filter(|s| **s == Segment::Mask).count()
    }

    /// Checks the request against the contract's preconditions.
    pub fn validate(&self, dimension: usize) -> Result<(), BackendError> {
        let masks = self.mask_count();
        if masks != self.queries.len() {
            return Err(BackendError::Protocol(format!(
                "prompt has {masks} masks but {} query lists",
                self.queries.len()
            )));
        }
        for (id, v) in &self.pseudowords {
            if v.len() != dimension {
                return Err(BackendError::Protocol(format!(
                    "pseudoword `{id}` has dimension {} but the backend has {dimension}",
                    v.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("request {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("cannot tokenize an empty surface")]
    EmptySurface,
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("backend does not support `{0}`")]
    Unsupported(&'static str),
}

impl BackendError {
    /// Transport failures may succeed on retry; everything else is final.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

pub trait Backend: Send + Sync {
    fn handshake(&self) -> &Handshake;

    fn tokenize(&self, surface: &str) -> Result<Vec<Token>, BackendError>;

    fn logprobs(&self, request: &LogprobsRequest) -> Result<MaskLogprobs, BackendError>;

    fn embeddings(&self) -> Result<EmbeddingTable, BackendError>;

    fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
        Err(BackendError::Unsupported("complete"))
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn handshake(&self) -> &Handshake {
        (**self).handshake()
    }
    fn tokenize(&self, surface: &str) -> Result<Vec<Token>, BackendError> {
        (**self).tokenize(surface)
    }
    fn logprobs(&self, request: &LogprobsRequest) -> Result<MaskLogprobs, BackendError> {
        (**self).logprobs(request)
    }
    fn embeddings(&self) -> Result<EmbeddingTable, BackendError> {
        (**self).embeddings()
    }
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }
}
