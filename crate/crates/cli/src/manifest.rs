//! `manifest.json`: what a command read, what it wrote, and under which
//! configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use faker_air::config::RunConfig;
use faker_air::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.conf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

/// One ablation row. `key` fingerprints everything the row's outputs depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRecord {
    pub name: String,
    pub key: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub outputs: Vec<FileRecord>,
    #[serde(default)]
    pub metrics: Vec<(String, Option<f64>)>,
}

impl RowRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// sha256 of the full configuration snapshot.
    pub config_hash: String,
    /// Hash of the data-defining keys, as stored in checkpoints.
    pub data_hash: String,
    pub config: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: Vec<FileRecord>,
    #[serde(default)]
    pub outputs: Vec<FileRecord>,
    #[serde(default)]
    pub timings_ms: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<RowRecord>,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(sha256_bytes(&bytes))
}

pub fn data_hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_bytes(cfg.to_file_string().as_bytes())
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash(cfg),
            data_hash: data_hash_hex(cfg.data_hash()),
            config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
            rows: Vec::new(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Reads the manifest if one exists; a missing file is not an error.
    pub fn read_optional(dir: &Path) -> Result<Option<Self>> {
        if dir.join(MANIFEST_FILE).exists() {
            Self::read(dir).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Records an output given relative to `dir`.
    pub fn add_output(&mut self, dir: &Path, rel: &str) -> Result<()> {
        self.outputs.push(FileRecord {
            path: rel.to_string(),
            sha256: sha256_file(&dir.join(rel))?,
        });
        Ok(())
    }

    pub fn time(&mut self, phase: &str, ms: u128) {
        self.timings_ms.insert(phase.to_string(), ms as u64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_bytes(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("datagen", &RunConfig::default(), 3);
        m.time("total", 12);
        m.rows.push(RowRecord {
            name: "obs-tf".into(),
            key: "k".into(),
            status: "ok".into(),
            error: None,
            outputs: vec![],
            metrics: vec![("far".into(), Some(0.25)), ("bias".into(), None)],
        });
        m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
        assert!(Manifest::read_optional(&dir.path().join("nope")).unwrap().is_none());
    }

    #[test]
    fn hashes_track_the_configuration() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.sft.epochs += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(a.data_hash(), b.data_hash());
        assert_eq!(data_hash_hex(0xab).len(), 16);
    }
}
