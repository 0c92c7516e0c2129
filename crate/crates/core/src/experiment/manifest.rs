use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{apply_overrides, ExperimentConfig};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub role: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command run: what was run, with which config, and a
/// digest of every file it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: Option<serde_json::Value>,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn artifact(&self, role: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.role == role)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifests serialize");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// The embedded config, if the run had one.
    pub fn experiment_config(&self) -> Result<Option<ExperimentConfig>> {
        self.config.clone().map(ExperimentConfig::from_json).transpose()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files a command writes into `dir` and finishes with a
/// `manifest.json` next to them.
pub struct OutputDir {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl OutputDir {
    pub fn create(dir: &Path, command: &str, config: Option<&ExperimentConfig>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                seed: config.map_or(0, |c| c.seed),
                config: config.map(ExperimentConfig::to_json),
                artifacts: Vec::new(),
                wall_clock_secs: 0.0,
            },
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, role: &str, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents.as_ref()).map_err(|e| Error::io(&path, e))?;
        self.record(role, name)?;
        Ok(path)
    }

    /// Lists a file that something else already wrote into the directory.
    pub fn record(&mut self, role: &str, name: &str) -> Result<()> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.retain(|a| a.path != name);
        self.manifest.artifacts.push(Artifact {
            role: role.to_string(),
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        let path = self.path(MANIFEST_FILE);
        fs::write(&path, self.manifest.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

/// Reads a config from a TOML file or from the config echo of a
/// `manifest.json`, then applies `key=value` overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = if text.trim_start().starts_with('{') {
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let cfg = manifest.experiment_config()?.ok_or_else(|| Error::Config {
            path: "config".into(),
            message: format!("manifest {} carries no experiment config", path.display()),
        })?;
        cfg.to_toml().parse::<toml::Table>().map_err(|e| Error::Format(e.to_string()))?
    } else {
        text.parse::<toml::Table>().map_err(|e| Error::Config {
            path: String::new(),
            message: format!("{}: {e}", path.display()),
        })?
    };
    apply_overrides(&mut table, overrides)?;
    let cfg = ExperimentConfig::from_table(table)?;
    cfg.validate()?;
    Ok(cfg)
}
