//! Deterministic in-process backend driven by a log-prob table.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Handshake, LogprobsRequest, MaskLogprobs, Token};
use crate::prompt::ClozePrompt;
use crate::pseudoword::EmbeddingTable;
use crate::util::stable_hash;

pub const DEFAULT_FLOOR: f64 = -5.0;
pub const GOLD_LOGPROB: f64 = -0.1;
const MOCK_VOCAB: u32 = 30_000;

/// Serializable oracle spec: `(fingerprint, token) -> log-prob`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub floor: Option<f64>,
    #[serde(default)]
    pub entries: Vec<OracleEntry>,
    /// Canned answers for `complete`, keyed by exact prompt.
    #[serde(default)]
    pub answers: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub fingerprint: String,
    pub token: String,
    pub logprob: f64,
}

/// Tokens are whitespace-separated words with punctuation split off; ids
/// are hashes of the token text.
#[derive(Debug, Clone)]
pub struct MockOracle {
    handshake: Handshake,
    table: HashMap<(String, String), f64>,
    floor: f64,
    answers: HashMap<String, String>,
    embeddings: Option<EmbeddingTable>,
}

impl MockOracle {
    /// # Panics
    /// If `floor` is positive.
    pub fn new(floor: f64) -> Self {
        assert!(floor <= 0.0, "log-probs must be <= 0");
        MockOracle {
            handshake: Handshake {
                name: "mock-oracle".into(),
                vocab_size: MOCK_VOCAB as usize,
                dimension: 8,
                cased: true,
                mask_token: crate::prompt::MASK_TEXT.into(),
                supports_complete: true,
            },
            table: HashMap::new(),
            floor,
            answers: HashMap::new(),
            embeddings: None,
        }
    }

    pub fn from_spec(spec: &OracleSpec) -> Result<Self, BackendError> {
        let mut m = MockOracle::new(spec.floor.unwrap_or(DEFAULT_FLOOR).min(0.0));
        for e in &spec.entries {
            if e.logprob > 0.0 {
                return Err(BackendError::Protocol(format!(
                    "oracle entry for `{}` has positive log-prob {}",
                    e.token, e.logprob
                )));
            }
            m.set(&e.fingerprint, &e.token, e.logprob);
        }
        for (q, a) in &spec.answers {
            m.answers.insert(q.clone(), a.clone());
        }
        Ok(m)
    }

    /// Oracle that gives every token of every gold label `GOLD_LOGPROB`
    /// under the prompt's fingerprint.
    pub fn gold_favoring<'a>(items: impl IntoIterator<Item = (&'a ClozePrompt, &'a [String])>) -> Self {
        let mut m = MockOracle::new(DEFAULT_FLOOR);
        for (prompt, golds) in items {
            let fp = prompt.fingerprint();
            for g in golds {
                for t in split_words(g) {
                    m.set(&fp, &t, GOLD_LOGPROB);
                }
            }
        }
        m
    }

    pub fn set(&mut self, fingerprint: &str, token: &str, logprob: f64) {
        assert!(logprob <= 0.0, "log-probs must be <= 0");
        self.table.insert((fingerprint.to_string(), token.to_string()), logprob);
    }

    pub fn set_answer(&mut self, prompt: &str, answer: &str) {
        self.answers.insert(prompt.to_string(), answer.to_string());
    }

    pub fn with_embeddings(mut self, table: EmbeddingTable) -> Self {
        self.handshake.dimension = table.dimension;
        self.handshake.vocab_size = table.rows.len();
        self.embeddings = Some(table);
        self
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.handshake.dimension = dimension;
        self
    }
}

fn split_words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in s.split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() || c == '\'' || c == '-' || c == '_' {
                cur.push(c);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

impl Backend for MockOracle {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn tokenize(&self, surface: &str) -> Result<Vec<Token>, BackendError> {
        let words = split_words(surface);
        if words.is_empty() {
            return Err(BackendError::EmptySurface);
        }
        Ok(words
            .into_iter()
            .map(|text| Token {
                id: (stable_hash(&text) % u64::from(MOCK_VOCAB)) as u32,
                text,
            })
            .collect())
    }

    fn logprobs(&self, request: &LogprobsRequest) -> Result<MaskLogprobs, BackendError> {
        request.validate(self.handshake.dimension)?;
        let fp = ClozePrompt::new(request.segments.clone()).fingerprint();
        Ok(request
            .queries
            .iter()
            .map(|tokens| {
                tokens
                    .iter()
                    .map(|t| {
                        let lp = self.table.get(&(fp.clone(), t.clone())).copied().unwrap_or(self.floor);
                        (t.clone(), lp)
                    })
                    .collect()
            })
            .collect())
    }

    fn embeddings(&self) -> Result<EmbeddingTable, BackendError> {
        self.embeddings.clone().ok_or(BackendError::Unsupported("embeddings"))
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(self.answers.get(prompt).cloned().unwrap_or_default())
    }
}
