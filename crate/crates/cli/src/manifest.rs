use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use exprgan::datagen::load_image_file;
use exprgan::seed::sha256_hex;
use serde::Serialize;

/// Checksummed output file.
#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a command: written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub input_checkpoint_id: Option<String>,
    pub outputs: Vec<Artifact>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            input_checkpoint_id: None,
            outputs: Vec::new(),
            started_unix: now(),
            finished_unix: 0.0,
        }
    }

    /// Check that `path` exists and is readable as what its extension says,
    /// then record its checksum.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("expected output {} was not written", path.display()))?;
        if bytes.is_empty() {
            bail!("output {} is empty", path.display());
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") => {
                load_image_file(path, None).with_context(|| format!("validating {}", path.display()))?;
            }
            Some("json") => {
                serde_json::from_slice::<serde_json::Value>(&bytes)
                    .with_context(|| format!("validating {}", path.display()))?;
            }
            _ => {}
        }
        self.outputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> Result<PathBuf> {
        self.finished_unix = now();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string_pretty(&self)?)
            .with_context(|| format!("writing run manifest {}", path.display()))?;
        Ok(path.to_path_buf())
    }
}

/// SHA-256 over a sequence of files, order-sensitive.
pub fn combined_checksum(paths: &[PathBuf]) -> Result<String> {
    let mut joined = String::new();
    for p in paths {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        joined.push_str(&sha256_hex(&bytes));
        joined.push('\n');
    }
    Ok(sha256_hex(joined.as_bytes()))
}
