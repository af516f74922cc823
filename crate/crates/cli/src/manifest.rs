//! Experiment manifests: what went in, which settings were used, what came out.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Effective settings after config file and flags were merged.
    pub settings: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f =
        BufReader::new(File::open(path).with_context(|| format!("hashing {}", path.display()))?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn hashes(paths: &[PathBuf], base: Option<&Path>) -> Result<Vec<FileHash>> {
    let mut out = paths
        .iter()
        .map(|p| {
            let shown = base.and_then(|b| p.strip_prefix(b).ok()).unwrap_or(p);
            Ok(FileHash {
                path: shown.to_string_lossy().into_owned(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

impl ExperimentManifest {
    pub fn new(command: &str, settings: serde_json::Value, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            settings,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Hashes inputs and outputs, then writes the manifest into `out`.
    /// Output paths are recorded relative to `out`.
    pub fn write(mut self, inputs: &[PathBuf], outputs: &[PathBuf], out: &Path) -> Result<PathBuf> {
        self.inputs = hashes(inputs, None)?;
        self.outputs = hashes(outputs, Some(out))?;
        let path = out.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
