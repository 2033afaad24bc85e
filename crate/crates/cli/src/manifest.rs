//! Run manifests: every artifact records the tool version, subcommand,
//! resolved configuration, input digests and seed that produced it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{read_input, write_output, CliError, CliResult};

pub const TOOL: &str = "clone-commons";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
}

/// Collects inputs as they are read and stamps every written artifact.
pub struct Run {
    pub manifest: RunManifest,
    pub written: Vec<PathBuf>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn to_pretty_json(v: &impl Serialize) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| CliError::runtime(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

impl Run {
    pub fn new(subcommand: &str, config: &impl Serialize, seed: Option<u64>) -> CliResult<Self> {
        Ok(Run {
            manifest: RunManifest {
                tool: TOOL.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                subcommand: subcommand.into(),
                config: serde_json::to_value(config).map_err(|e| CliError::runtime(e.to_string()))?,
                inputs: Vec::new(),
                seed,
            },
            written: Vec::new(),
        })
    }

    pub fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = read_input(path)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        self.manifest.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: digest,
            bytes: bytes.len() as u64,
        });
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> CliResult<String> {
        String::from_utf8(self.read(path)?)
            .map_err(|_| CliError::validation(format!("{} is not valid UTF-8", path.display())))
    }

    /// Writes `value` as JSON with a top-level `manifest` member.
    pub fn write_json(&mut self, path: &Path, value: &impl Serialize) -> CliResult<()> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::runtime(e.to_string()))?;
        let manifest = serde_json::to_value(&self.manifest).map_err(|e| CliError::runtime(e.to_string()))?;
        match v.as_object_mut() {
            Some(obj) => {
                obj.insert("manifest".into(), manifest);
            }
            None => {
                v = serde_json::json!({ "manifest": manifest, "data": v });
            }
        }
        self.write_raw(path, &to_pretty_json(&v)?)
    }

    /// Writes a CSV (or other non-JSON) artifact with a manifest sidecar.
    pub fn write_with_sidecar(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        self.write_raw(path, bytes)?;
        let m = to_pretty_json(&self.manifest)?;
        self.write_raw(&sidecar_path(path), &m)
    }

    pub fn write_csv_with<F>(&mut self, path: &Path, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut Vec<u8>) -> clone_commons_core::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_with_sidecar(path, &buf)
    }

    pub fn write_raw(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        write_output(path, bytes)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn manifest_json(&self) -> CliResult<String> {
        serde_json::to_string(&self.manifest).map_err(|e| CliError::runtime(e.to_string()))
    }
}
