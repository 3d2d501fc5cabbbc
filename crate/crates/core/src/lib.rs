//! Ontology-driven memorizing and reasoning probes for masked language models.
//!
//! The pipeline reads an RDFS-style ontology ([`ontology`]), builds cloze
//! probes from it ([`memorize`], [`entailment`]), renders prompts
//! ([`prompt`]), scores candidates through a pluggable mask-filling backend
//! ([`scoring`], [`backend`]) and reduces ranked lists to metrics
//! ([`eval`]).

pub mod backend;
pub mod entailment;
pub mod eval;
pub mod ingest;
pub mod jsonl;
pub mod manifest;
pub mod memorize;
pub mod ontology;
pub mod prompt;
pub mod pseudoword;
pub mod scoring;
pub mod util;
