use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::KL_DIRECTION;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIdentity {
    pub weights: String,
    pub weights_sha256: String,
    pub n_layers: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub preprocessed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub kind: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub model: ModelIdentity,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub kl_direction: String,
    pub baseline_forwards: Option<usize>,
    pub intervened_forwards: Option<usize>,
    /// Output file names relative to the output directory.
    pub files: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the compact JSON form; field order is fixed by the struct.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

pub fn now_unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, model: ModelIdentity, started_unix_ms: u128) -> Self {
        Self {
            tool: "stagescope".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            kind: cfg.kind.as_str().into(),
            config_sha256: config_hash(cfg),
            config: serde_json::to_value(cfg).expect("config serializes"),
            model,
            started_unix_ms,
            finished_unix_ms: started_unix_ms,
            kl_direction: KL_DIRECTION.into(),
            baseline_forwards: None,
            intervened_forwards: None,
            files: Vec::new(),
        }
    }

    /// Writes `manifest.json` into `out_dir` after checking every listed
    /// file exists there.
    pub fn emit(&mut self, out_dir: &Path) -> Result<()> {
        if let Some(missing) = self.files.iter().find(|f| !out_dir.join(f).is_file()) {
            return Err(Error::InvalidArgument(format!(
                "manifest lists {missing}, which was not written"
            )));
        }
        self.finished_unix_ms = now_unix_ms();
        let path = out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}
