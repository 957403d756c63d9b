//! Result file plumbing: provenance headers and atomic writes.

use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sami_core::envs::ENV_VERSION;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stamped on every result file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultHeader {
    pub config_hash: String,
    pub seed: u64,
    pub env_version: String,
    pub code_version: String,
}

impl ResultHeader {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            config_hash: config_hash(config)?,
            seed,
            env_version: ENV_VERSION.to_string(),
            code_version: CODE_VERSION.to_string(),
        })
    }
}

/// SHA-256 of the config's canonical JSON.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// One compact JSON object per line, after a `{"header": ...}` line when
/// `header` is given.
pub fn write_jsonl<T: Serialize>(path: &Path, header: Option<&ResultHeader>, rows: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    if let Some(h) = header {
        serde_json::to_writer(&mut bytes, &serde_json::json!({ "header": h }))?;
        bytes.push(b'\n');
    }
    for row in rows {
        serde_json::to_writer(&mut bytes, row)?;
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}

/// CSV preceded by `# key: value` provenance lines.
pub fn write_csv(path: &Path, header: Option<&ResultHeader>, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut bytes = Vec::new();
    if let Some(h) = header {
        bytes.extend_from_slice(provenance_comment(h).as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record(columns)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))?;
    }
    write_atomic(path, &bytes)
}

pub fn provenance_comment(h: &ResultHeader) -> String {
    format!(
        "# config_hash: {}\n# seed: {}\n# env_version: {}\n# code_version: {}\n",
        h.config_hash, h.seed, h.env_version, h.code_version
    )
}
