//! Run-directory bookkeeping.
//!
//! Every experiment command writes its artifacts into a run directory and
//! finishes by writing `manifest.json`: the tool version, the fully resolved
//! configuration, the seeds that were consumed, and a SHA-256 digest of every
//! artifact. The `report` command re-hashes the artifacts against the
//! manifest, so a run directory is self-verifying. Nothing here depends on
//! wall-clock time; rerunning a command with the same arguments must produce
//! byte-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "wpse-lab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST_FILE: &str = "manifest.json";

/// Comment line placed at the top of every CSV artifact so downstream
/// consumers can tell which tool version wrote the schema.
pub fn csv_header() -> String {
    format!("# {TOOL_NAME} v{TOOL_VERSION}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
}

/// A run directory under construction. Artifacts are registered as they are
/// written; `finalize` seals the directory with the manifest.
pub struct RunDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("creating run directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .with_context(|| format!("serializing {name}"))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes a CSV artifact: version comment, column row, then data rows.
    pub fn write_csv(&mut self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut text = csv_header();
        text.push('\n');
        text.push_str(&columns.join(","));
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `manifest.json` and consumes the builder. `config` should be
    /// the fully resolved configuration (after defaults and flag overrides),
    /// and `seeds` every top-level seed the command consumed.
    pub fn finalize<C: Serialize>(self, command: &str, config: &C, seeds: &[u64]) -> Result<()> {
        let manifest = Manifest {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            seeds: seeds.to_vec(),
            config: serde_json::to_value(config).context("serializing manifest config")?,
            files: self.files.clone(),
        };
        let mut text =
            serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
        text.push('\n');
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

pub fn read_manifest(run_dir: &Path) -> Result<Manifest> {
    let path = run_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
