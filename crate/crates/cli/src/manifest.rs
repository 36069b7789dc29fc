//! Run manifests: the resolved configuration plus content hashes of every
//! input and output file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: u64,
    /// Resolved settings, key to value.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileEntry>,
    /// Paths relative to `out_dir`.
    pub outputs: Vec<FileEntry>,
    pub out_dir: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, seed: u64, config_text: &str, out_dir: &Path) -> Self {
        let config = config_text
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            out_dir: out_dir.display().to_string(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Hashes each output in `out_dir` and writes the manifest next to them.
    pub fn finish(mut self, out_dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf> {
        for p in outputs {
            let rel = p.strip_prefix(out_dir).unwrap_or(p);
            self.outputs.push(FileEntry {
                path: rel.display().to_string(),
                sha256: sha256_file(p)?,
            });
        }
        let path = out_dir.join(FILE_NAME);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
