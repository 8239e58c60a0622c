//! Content-addressed artifact files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical JSON of `request` followed by `seed`.
pub fn content_id<T: Serialize>(request: &T, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(request).expect("request serializes"));
    h.update(seed.to_le_bytes());
    hex::encode(&h.finalize()[..16])
}

#[derive(Clone, Debug)]
pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    /// Write through a temporary file and rename, so readers never see a
    /// partial artifact.
    pub fn put(&self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let dest = self.path(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &dest)?;
        Ok(dest)
    }

    pub fn get(&self, name: &str) -> std::io::Result<Vec<u8>> {
        fs::read(self.path(name))
    }
}
