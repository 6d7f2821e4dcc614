//! Per-run bookkeeping: each subcommand writes one manifest next to its
//! artifacts, recording the resolved configuration, seed, timestamps, and
//! artifact paths. Timestamps make the manifest itself non-reproducible by
//! design; the data artifacts are the deterministic surface.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub seed: u64,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub artifacts: Vec<String>,
    pub config: toml::Value,
}

pub struct ManifestBuilder {
    subcommand: String,
    seed: u64,
    started: u64,
    artifacts: Vec<PathBuf>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            seed,
            started: now(),
            artifacts: Vec::new(),
        }
    }

    pub fn add_artifact(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    /// Serializes the manifest as `run_manifest.toml` inside `out_dir`.
    pub fn write<C: Serialize>(self, out_dir: &Path, config: &C) -> Result<PathBuf> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: self.subcommand,
            seed: self.seed,
            started_unix_s: self.started,
            finished_unix_s: now(),
            artifacts: self
                .artifacts
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            config: toml::Value::try_from(config).context("serialize config snapshot")?,
        };
        let path = out_dir.join("run_manifest.toml");
        let text = toml::to_string_pretty(&manifest).context("serialize manifest")?;
        std::fs::write(&path, text).with_context(|| format!("write {}", path.display()))?;
        Ok(path)
    }
}
