//! Per-command manifests, provenance hashing, and the output-directory lock.
//!
//! A manifest records the tool version, command, master seed, full config, and
//! the hash of every input and output file. Manifests contain no timestamps or
//! absolute paths, so identical runs produce identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lenprobe::{Error, Result};

pub use lenprobe::hashing::hash_file_hex;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FileRef {
    pub name: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
}

impl Manifest {
    pub fn new(command: &str, master_seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            master_seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        self.inputs.push(file_ref(out_dir, path)?);
        Ok(())
    }

    pub fn add_output(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        self.outputs.push(file_ref(out_dir, path)?);
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let dir = out_dir.join("manifests");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", self.command));
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization failed: {e}")))?;
        std::fs::write(&path, json)?;
        Ok(path)
    }
}

fn file_ref(out_dir: &Path, path: &Path) -> Result<FileRef> {
    let name = path
        .strip_prefix(out_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned();
    Ok(FileRef { name, hash: hash_file_hex(path)? })
}

/// Requires an upstream artifact, telling the user which command produces it.
pub fn require_artifact(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Data(format!(
            "missing {}; run `lenprobe {producer}` first",
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        )));
    }
    Ok(())
}

/// Exclusive lock on an output directory. One command at a time; the lock file
/// disappears when the guard drops.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "output directory is locked by another command ({} exists)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        std::fs::remove_file(&self.path).ok();
    }
}
