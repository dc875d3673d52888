use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A cached forge response. 404s are kept too: commits and issue numbers
/// never move, so a dangling reference stays dangling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub status: u16,
    pub body: serde_json::Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, endpoint: &str, key: &str) -> PathBuf {
        let digest = hex::encode(Sha256::digest(key.as_bytes()));
        self.root.join(endpoint).join(format!("{digest}.json"))
    }

    pub fn get(&self, endpoint: &str, key: &str) -> Option<CacheEntry> {
        let bytes = fs::read(self.path_for(endpoint, key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(e) => Some(e),
            Err(err) => {
                log::warn!("ignoring corrupt cache entry {endpoint}/{key}: {err}");
                None
            }
        }
    }

    /// Writes to a temporary file in the same directory and renames it into
    /// place, so readers never see a partial entry.
    pub fn put(&self, endpoint: &str, key: &str, entry: &CacheEntry) -> std::io::Result<()> {
        let path = self.path_for(endpoint, key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&serde_json::to_vec(entry).expect("cache entry serializes"))?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        let mut s = CacheStats::default();
        for e in walkdir::WalkDir::new(&self.root).into_iter().filter_map(Result::ok) {
            if e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "json") {
                s.entries += 1;
                s.bytes += e.metadata().map_or(0, |m| m.len());
            }
        }
        s
    }

    pub fn clear(&self) -> std::io::Result<CacheStats> {
        let before = self.stats();
        match fs::remove_dir_all(&self.root) {
            Ok(()) => Ok(before),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(before),
            Err(e) => Err(e),
        }
    }
}
