//! Run manifests: every command writes one before doing work and finalizes
//! it afterwards. A manifest holds the fully resolved configuration, the
//! seed, artifact paths, tool version, and wall-clock bounds, plus the
//! measured per-row timings of result tables. Re-running a command from its
//! manifest replays those timings, so primary outputs reproduce byte for
//! byte (the same convention as recorded build timestamps in reproducible
//! builds).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub status: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub seed: u64,
    /// Every flag of the command, fully resolved (defaults materialized).
    pub config: BTreeMap<String, String>,
    /// Paths of the primary outputs.
    pub artifacts: Vec<String>,
    /// Measured per-row runtimes of the results table, for replay.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runtime_ms: Vec<u64>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            status: "running".to_string(),
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            seed,
            config,
            artifacts: Vec::new(),
            runtime_ms: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let text = toml::to_string_pretty(self).context("serializing run manifest")?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn finalize(&mut self, path: &Path, artifacts: Vec<PathBuf>) -> Result<()> {
        self.status = "complete".to_string();
        self.finished_unix_ms = Some(now_ms());
        self.artifacts = artifacts
            .into_iter()
            .map(|p| p.display().to_string())
            .collect();
        self.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let manifest: RunManifest =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(manifest)
    }

    /// Checks the manifest belongs to the given subcommand.
    pub fn expect_command(&self, command: &str) -> Result<()> {
        if self.command != command {
            bail!("manifest records a '{}' run, not '{command}'", self.command);
        }
        Ok(())
    }
}

/// Default manifest path for a given primary output.
pub fn manifest_path_for(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join("run_manifest.toml")
    } else {
        let mut name = output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "output".to_string());
        name.push_str(".manifest.toml");
        output.with_file_name(name)
    }
}
