//! Run manifests and schema versions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io;

pub const SCHEMA_MAJOR: u32 = 1;
pub const SCHEMA_VERSION: &str = "1.0";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    /// Digest of `path`, recorded relative to `base` when possible.
    pub fn of(path: &Path, base: &Path) -> CliResult<Self> {
        let shown = path.strip_prefix(base).unwrap_or(path);
        Ok(Self {
            path: shown.to_string_lossy().into_owned(),
            sha256: io::sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub command: String,
    pub software_version: String,
    pub args: Vec<String>,
    /// Everything needed to rerun the command.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            command: command.into(),
            software_version: env!("CARGO_PKG_VERSION").into(),
            args: std::env::args().collect(),
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let value: serde_json::Value = io::read_json(path)?;
        check_schema(path, &value)?;
        serde_json::from_value(value).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn output(&self, name: &str) -> Option<&FileDigest> {
        self.outputs.iter().find(|f| f.path == name)
    }
}

/// Rejects files written by a newer major schema.
pub fn check_schema(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let v = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::Data(format!("{}: missing schema_version", path.display())))?;
    let major: u32 = v
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| CliError::Data(format!("{}: bad schema_version {v:?}", path.display())))?;
    if major > SCHEMA_MAJOR {
        return Err(CliError::Data(format!(
            "{}: schema version {v} is newer than supported {SCHEMA_VERSION}",
            path.display()
        )));
    }
    Ok(())
}
