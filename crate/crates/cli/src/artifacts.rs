//! Output directory bookkeeping: files are written with a `.partial` suffix
//! and only get their final names, and a manifest entry, once the whole run
//! has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST: &str = "manifest.json";
const PARTIAL: &str = ".partial";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Manifest> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?)
    }

    pub fn get(&self, path: &str) -> Option<&ManifestEntry> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    fn partial_path(&self, rel: &str) -> PathBuf {
        self.dir.join(format!("{rel}{PARTIAL}"))
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.partial_path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ManifestEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Renames every artifact to its final name and writes the manifest.
    pub fn finish(self) -> CliResult<Manifest> {
        for e in &self.entries {
            fs::rename(self.partial_path(&e.path), self.dir.join(&e.path))?;
        }
        let manifest = Manifest {
            artifacts: self.entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn files_stay_partial_until_finished() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path()).unwrap();
        w.write("a.txt", b"hello").unwrap();
        w.write("sub/b.txt", b"x").unwrap();
        assert!(dir.path().join("a.txt.partial").exists());
        assert!(!dir.path().join("a.txt").exists());
        let m = w.finish().unwrap();
        assert!(dir.path().join("sub/b.txt").exists());
        assert_eq!(
            m.get("a.txt").unwrap().sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
    }
}
