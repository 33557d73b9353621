//! Run manifests: one JSON document written atomically beside every
//! output artifact, recording the command, resolved configuration and its
//! hash, input/output paths with digests, seed, tool version, and wall
//! time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved configuration, key -> value.
    pub config: BTreeMap<String, String>,
    /// SHA-256 over the canonical config serialization.
    pub config_hash: String,
    pub inputs: Vec<String>,
    /// Output path -> SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
    pub wall_time_ms: u64,
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").expect("write to string");
    }
    s
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        let canonical =
            config.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("\n");
        Self {
            command: command.to_string(),
            config_hash: sha256_bytes(canonical.as_bytes()),
            config,
            inputs: Vec::new(),
            outputs: BTreeMap::new(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_ms: 0,
        }
    }

    pub fn record_input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(file_name_of(path), sha256_file(path)?);
        Ok(())
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn write_beside(&self, artifact: &Path) -> Result<PathBuf> {
        let manifest_path = manifest_path_for(artifact);
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.tmp",
            manifest_path.file_name().and_then(|n| n.to_str()).unwrap_or("manifest")
        ));
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &manifest_path)
            .with_context(|| format!("renaming into {}", manifest_path.display()))?;
        Ok(manifest_path)
    }
}

fn file_name_of(path: &Path) -> String {
    path.file_name().and_then(|n| n.to_str()).map(str::to_string).unwrap_or_else(|| {
        path.display().to_string()
    })
}

/// `out/foo.jsonl` -> `out/foo.manifest.json`; directories get
/// `dir/manifest.json`.
pub fn manifest_path_for(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        return artifact.join("manifest.json");
    }
    match artifact.file_stem().and_then(|s| s.to_str()) {
        Some(stem) => artifact.with_file_name(format!("{stem}.manifest.json")),
        None => artifact.with_extension("manifest.json"),
    }
}
