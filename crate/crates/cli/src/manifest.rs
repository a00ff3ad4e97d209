use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command: resolved configuration, seeds and
/// digests of what was read and written. No timestamps, so reruns produce
/// identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &'static str, config: impl Serialize) -> Result<Self, Failure> {
        Ok(Self {
            format_version: MANIFEST_FORMAT_VERSION,
            tool: "satblend",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config).map_err(|e| Failure::Data(e.to_string()))?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, out_dir: &Path, path: &Path) -> Result<(), Failure> {
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.push(FileDigest {
            path: rel.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Writes `manifest.json` into `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<(), Failure> {
        satblend::io::write_json(&out_dir.join("manifest.json"), self)?;
        Ok(())
    }
}
