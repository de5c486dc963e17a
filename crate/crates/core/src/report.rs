//! JSON reports with a config echo and a content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Asserted checks decide the exit status; recorded ones are informational.
    pub asserted: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    pub config: Value,
    /// SHA-256 of the canonical JSON of the resolved config.
    pub config_hash: String,
    pub checks: Vec<Check>,
    pub data: Value,
}

impl Report {
    pub fn new(experiment: &str, config: &Config) -> Result<Self> {
        let echo = serde_json::to_value(config)?;
        Ok(Self {
            schema_version: crate::SCHEMA_VERSION,
            experiment: experiment.to_string(),
            seed: config.seed,
            config_hash: content_hash(&echo)?,
            config: echo,
            checks: Vec::new(),
            data: Value::Null,
        })
    }

    pub fn assert(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            asserted: true,
            detail: detail.into(),
        });
    }

    pub fn record(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            asserted: false,
            detail: detail.into(),
        });
    }

    /// True iff every asserted check passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| c.asserted).all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.asserted && !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_json(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.json", self.experiment));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

/// Hex SHA-256 of the canonical (sorted-key) serialization.
pub fn content_hash(v: &Value) -> Result<String> {
    // serde_json's default map is ordered by key, so to_vec is canonical.
    let bytes = serde_json::to_vec(v)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
