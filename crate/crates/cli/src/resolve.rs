//! Flag resolution: defaults, then the config file, then explicit CLI
//! flags, then the `MSGTL_SEED` environment variable for the seed.
//! `--from-manifest` substitutes a recorded manifest for the config file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use crate::manifest::RunManifest;

/// Key-value layer loaded from a TOML config file or a run manifest.
#[derive(Debug, Default, Clone)]
pub struct FileLayer {
    values: BTreeMap<String, String>,
}

impl FileLayer {
    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (key, value) in table {
            let rendered = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => bail!("config key '{key}' has unsupported type: {other}"),
            };
            values.insert(key, rendered);
        }
        Ok(FileLayer { values })
    }

    pub fn from_manifest(manifest: &RunManifest) -> Self {
        FileLayer {
            values: manifest.config.clone(),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| anyhow::anyhow!("config key '{key}' has invalid value '{raw}'")),
        }
    }
}

/// Resolves each flag and remembers the final value for the run manifest.
#[derive(Debug, Default)]
pub struct Resolver {
    file: FileLayer,
    pub resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(file: FileLayer) -> Self {
        Resolver {
            file,
            resolved: BTreeMap::new(),
        }
    }

    pub fn value<T: FromStr + Display + Clone>(
        &mut self,
        key: &str,
        cli: Option<T>,
        default: T,
    ) -> Result<T> {
        let value = match cli {
            Some(v) => v,
            None => self.file.get::<T>(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn optional<T: FromStr + Display + Clone>(
        &mut self,
        key: &str,
        cli: Option<T>,
    ) -> Result<Option<T>> {
        let value = match cli {
            Some(v) => Some(v),
            None => self.file.get::<T>(key)?,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    /// Seed resolution: flag or file, then the environment override.
    pub fn seed(&mut self, cli: Option<u64>, default: u64) -> Result<u64> {
        let mut seed = self.value("seed", cli, default)?;
        if let Ok(env_seed) = std::env::var("MSGTL_SEED") {
            seed = env_seed
                .parse()
                .context("MSGTL_SEED must be a 64-bit unsigned integer")?;
            self.resolved.insert("seed".to_string(), seed.to_string());
        }
        Ok(seed)
    }

    pub fn path(&mut self, key: &str, cli: Option<PathBuf>) -> Result<PathBuf> {
        let value = match cli {
            Some(v) => v,
            None => self
                .file
                .get::<String>(key)?
                .map(PathBuf::from)
                .with_context(|| format!("missing required flag --{}", key.replace('_', "-")))?,
        };
        self.resolved
            .insert(key.to_string(), value.display().to_string());
        Ok(value)
    }

    pub fn optional_path(&mut self, key: &str, cli: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let value = match cli {
            Some(v) => Some(v),
            None => self.file.get::<String>(key)?.map(PathBuf::from),
        };
        if let Some(v) = &value {
            self.resolved
                .insert(key.to_string(), v.display().to_string());
        }
        Ok(value)
    }
}

/// Parses a comma-separated list of values.
pub fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("bad {what} entry '{part}'"))
        })
        .collect()
}
