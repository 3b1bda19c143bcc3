use std::fs;
use std::path::Path;

use mfl_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Record of one command invocation, enough to re-run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: u64,
    /// Files inside the output directory that the command read, by role,
    /// with their SHA-256.
    pub inputs: Vec<HashedFile>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(role: &str, dir: &Path, name: &str) -> Result<HashedFile> {
    let bytes = fs::read(dir.join(name))?;
    Ok(HashedFile {
        role: role.to_string(),
        path: name.to_string(),
        sha256: sha256_hex(&bytes),
    })
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], seed: u64) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Path of the input with the given role, after checking its hash.
    pub fn verified_input(&self, role: &str, dir: &Path) -> Result<std::path::PathBuf> {
        let entry = self
            .inputs
            .iter()
            .find(|h| h.role == role)
            .ok_or_else(|| Error::Config(format!("manifest has no {role} input")))?;
        let path = dir.join(&entry.path);
        let bytes = fs::read(&path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Config(format!("{} changed since the manifest was written", path.display())));
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn detects_changed_input() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "one").unwrap();
        let mut m = Manifest::new("infer", &[], 0);
        m.inputs.push(hash_file("data", dir.path(), "a.txt").unwrap());
        assert!(m.verified_input("data", dir.path()).is_ok());
        fs::write(dir.path().join("a.txt"), "two").unwrap();
        assert!(m.verified_input("data", dir.path()).is_err());
    }
}
