//! Run manifests written next to every output.
//!
//! A manifest records what is needed to reproduce an artifact: graph hash,
//! seeds, template and scoring settings, backend handshake and paths. It
//! holds no timestamps, so identical runs produce identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::Handshake;
use crate::entailment::GridCell;
use crate::scoring::ScoringConfig;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_hash: Option<String>,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_variant: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scoring: Vec<ScoringConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handshake: Option<Handshake>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<GridCell>>,
    /// Free-form settings, e.g. flags not covered above.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|source| ManifestError::Json {
            path: path.display().to_string(),
            source,
        })?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Manifest location for an output file or directory.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        return output.join("manifest.json");
    }
    let mut s = output.as_os_str().to_owned();
    s.push(MANIFEST_SUFFIX);
    PathBuf::from(s)
}
