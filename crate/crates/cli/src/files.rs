//! Headers of the CLI's own JSONL files and input-kind detection.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ontoprobe::backend::Handshake;
use ontoprobe::jsonl::read_header;
use ontoprobe::manifest::{manifest_path, RunManifest};
use ontoprobe::memorize::Subtask;
use ontoprobe::scoring::ScoringConfig;
use serde::{Deserialize, Serialize};

/// Header of a `<SUBTASK>.mc.jsonl` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceHeader {
    pub kind: String,
    pub subtask: Subtask,
    pub graph_hash: String,
    pub seed: u64,
    pub n_choices: usize,
}

/// Header of a premise-probe file written by `gen-reason --premises-out`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseHeader {
    pub kind: String,
    pub graph_hash: String,
    pub seed: u64,
    pub premise_variant: String,
    /// Reasoning file the premises were taken from.
    pub instances: String,
}

/// Header of a `probe` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultHeader {
    pub kind: String,
    pub input_kind: InputKind,
    pub input: String,
    /// Subtask name, `reasoning` or `premise`.
    pub task: String,
    pub graph_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ScoringConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    pub handshake: Handshake,
    #[serde(default)]
    pub pairs: usize,
}

/// One free-text answer to a choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceAnswer {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const KIND_CHOICE: &str = "choice";
pub const KIND_PREMISE: &str = "premise";
pub const KIND_RESULT: &str = "result";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Mem,
    Reason,
    Premise,
    Mc,
    Result,
}

/// Infers the kind of a JSONL file from the fields of its header.
pub fn input_kind(path: &Path) -> Result<(InputKind, serde_json::Value)> {
    let header: serde_json::Value = read_header(path).with_context(|| format!("reading {}", path.display()))?;
    let has = |k: &str| header.get(k).is_some();
    let kind = match header.get("kind").and_then(|k| k.as_str()) {
        Some(KIND_CHOICE) => InputKind::Mc,
        Some(KIND_PREMISE) => InputKind::Premise,
        Some(KIND_RESULT) => InputKind::Result,
        Some(other) => bail!("{}: unknown file kind `{other}`", path.display()),
        None if has("splits") && has("subtask") => InputKind::Mem,
        None if has("grid") && has("rules") => InputKind::Reason,
        None => bail!("{}: unrecognized header", path.display()),
    };
    Ok((kind, header))
}

pub fn header_hash(header: &serde_json::Value) -> Option<&str> {
    header.get("graph_hash").and_then(|h| h.as_str())
}

pub fn write_manifest(output: &Path, manifest: &RunManifest) -> Result<()> {
    let path = manifest_path(output);
    manifest
        .write(&path)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn path_str(p: &Path) -> String {
    p.display().to_string()
}
