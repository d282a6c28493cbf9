use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use scenetext_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical JSON form of `config` (sorted keys).
    pub config_hash: String,
    /// Effective configuration, including every flag that changed it.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<PathBuf>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("JSON values always serialize");
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunManifest {
    pub fn start(command: &str, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)
            .map_err(|e| Error::Config(format!("cannot record config: {e}")))?;
        Ok(Self {
            command: command.to_string(),
            config_hash: config_hash(&config),
            config,
            seed: None,
            corpus: None,
            checkpoint: None,
            started_unix: unix_now(),
            finished_unix: 0,
            artifacts: Vec::new(),
        })
    }

    /// Stamps the finish time and writes `dir/<command>.manifest.json`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        let path = dir.join(format!("{}.manifest.json", self.command));
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::Config(format!("cannot encode manifest: {e}")))?;
        crate::commands::write_text(&path, &(json + "\n"))?;
        Ok(path)
    }
}
