use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written into every output directory. Together with
/// the persisted config it is enough to repeat the job on one worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub version: String,
    pub seed: u64,
    /// Fully resolved configuration, TOML.
    pub config: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    /// Artifact name to path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    /// SHA-256 of each artifact, same keys as `artifacts`.
    pub digests: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn start(seed: u64, config: String) -> RunManifest {
        RunManifest {
            command: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            started_at: Utc::now(),
            finished_at: None,
            artifacts: BTreeMap::new(),
            digests: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    /// Register `rel` (relative to `dir`) and record its digest.
    pub fn add_artifact(&mut self, dir: &Path, name: &str, rel: &str) -> std::io::Result<()> {
        let digest = file_digest(&dir.join(rel))?;
        self.artifacts.insert(name.into(), rel.into());
        self.digests.insert(name.into(), digest);
        Ok(())
    }

    pub fn finish(&mut self, dir: &Path) -> std::io::Result<()> {
        self.finished_at = Some(Utc::now());
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }

    pub fn load(path: &Path) -> std::io::Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
