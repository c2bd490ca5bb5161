use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Record of one command invocation, written next to its primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// SHA-256 of the effective configuration as compact JSON.
    pub config_digest: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub duration_secs: f64,
}

/// Digest of a configuration value. `serde_json::Value` keeps object keys
/// sorted, so equal configurations always hash the same.
pub fn config_digest(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

pub struct ManifestBuilder {
    command: String,
    inputs: BTreeMap<String, PathBuf>,
    outputs: Vec<PathBuf>,
    config: serde_json::Value,
    seed: Option<u64>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            config,
            seed,
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, name: &str, path: Option<&Path>) -> &mut Self {
        if let Some(p) = path {
            self.inputs.insert(name.to_string(), p.to_path_buf());
        }
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn finish(&self) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            config_digest: config_digest(&self.config),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        }
    }

    /// Writes the manifest to `<primary>.manifest.json`.
    pub fn write_for(&self, primary: &Path) -> anyhow::Result<PathBuf> {
        let path = sidecar(primary, "manifest.json");
        let text = serde_json::to_string_pretty(&self.finish())?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// `out.jsonl` + `summary.json` -> `out.summary.json`.
pub fn sidecar(primary: &Path, suffix: &str) -> PathBuf {
    let stem = primary.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    primary.with_file_name(format!("{stem}.{suffix}"))
}
