use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

/// Content-addressed store of encoder outputs, one little-endian `f32`
/// vector per file. Concurrent writers race benignly: values are
/// deterministic and files are replaced atomically.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Cache key for `text` under an encoder identity.
pub fn content_hash(model_tag: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_tag.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(EmbeddingCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.f32"))
    }

    /// Stored vector, if present and well formed. `dim` of 0 accepts any
    /// length. A malformed entry is deleted.
    pub fn lookup(&self, hash: &str, dim: usize) -> Option<Vec<f32>> {
        let path = self.path(hash);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("embedding cache: cannot read {}: {e}", path.display());
                return None;
            }
        };
        let ok_len = !bytes.is_empty() && bytes.len() % 4 == 0 && (dim == 0 || bytes.len() == dim * 4);
        let values: Vec<f32> = if ok_len {
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
        } else {
            Vec::new()
        };
        if !ok_len || values.iter().any(|v| !v.is_finite()) {
            log::warn!("embedding cache: evicting corrupt entry {}", path.display());
            let _ = fs::remove_file(&path);
            return None;
        }
        Some(values)
    }

    pub fn store(&self, hash: &str, vector: &[f32]) -> std::io::Result<()> {
        let mut bytes = Vec::with_capacity(vector.len() * 4);
        for v in vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let tmp = self.dir.join(format!(
            ".{hash}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, self.path(hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let c = EmbeddingCache::new(dir.path()).unwrap();
        let v = [1.5f32, -0.0, 3.25e-8, f32::MAX];
        let h = content_hash("m", "x = 1;");
        c.store(&h, &v).unwrap();
        let got = c.lookup(&h, 4).unwrap();
        assert_eq!(got.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(c.lookup(&content_hash("m", "other"), 4).is_none());
        assert_ne!(content_hash("m", "x"), content_hash("n", "x"));
    }

    #[test]
    fn corrupt_entry_is_evicted() {
        let dir = tempfile::tempdir().unwrap();
        let c = EmbeddingCache::new(dir.path()).unwrap();
        let h = content_hash("m", "y");
        fs::write(c.path(&h), [1u8, 2, 3]).unwrap();
        assert!(c.lookup(&h, 0).is_none());
        assert!(!c.path(&h).exists());
        c.store(&h, &[1.0, 2.0]).unwrap();
        assert!(c.lookup(&h, 3).is_none(), "wrong width counts as corrupt");
        assert!(!c.path(&h).exists());
    }
}
