//! Content-addressed embedding cache with an optional on-disk file.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};

use super::EmbedError;

const MAGIC: &[u8; 8] = b"DBRCACH1";

pub type CacheKey = [u8; 32];

/// Map from sha256(provider identity, NUL, text) to a vector. Readers run
/// concurrently; inserts take the write lock.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<CacheKey, Arc<[f32]>>>,
    path: Option<PathBuf>,
    dirty: AtomicBool,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a cache backed by `path`, loading it if the file exists.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, EmbedError> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let bytes = fs::read(&path).map_err(|e| cache_err(&path, e.to_string()))?;
            entries = decode(&bytes).map_err(|m| cache_err(&path, m))?;
        }
        Ok(EmbeddingCache {
            entries: RwLock::new(entries),
            path: Some(path),
            dirty: AtomicBool::new(false),
        })
    }

    pub fn key(identity: &str, text: &str) -> CacheKey {
        let mut h = Sha256::new();
        h.update(identity.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.finalize().into()
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<[f32]>> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, vector: Arc<[f32]>) {
        self.entries.write().expect("cache lock").insert(key, vector);
        self.dirty.store(true, Ordering::Release);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the cache file if anything changed. Records are sorted by key,
    /// so equal contents give equal bytes.
    pub fn flush(&self) -> Result<(), EmbedError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if !self.dirty.swap(false, Ordering::AcqRel) {
            return Ok(());
        }
        let snapshot: Vec<(CacheKey, Arc<[f32]>)> = {
            let map = self.entries.read().expect("cache lock");
            let mut v: Vec<_> = map.iter().map(|(k, v)| (*k, v.clone())).collect();
            v.sort_by_key(|e| e.0);
            v
        };
        write_atomic(path, &snapshot).map_err(|e| {
            self.dirty.store(true, Ordering::Release);
            cache_err(path, e.to_string())
        })
    }
}

impl Drop for EmbeddingCache {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::warn!("{e}");
        }
    }
}

fn cache_err(path: &Path, message: String) -> EmbedError {
    EmbedError::Cache {
        path: path.display().to_string(),
        message,
    }
}

fn write_atomic(path: &Path, records: &[(CacheKey, Arc<[f32]>)]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(records.len() as u64).to_le_bytes())?;
        for (k, v) in records {
            w.write_all(k)?;
            w.write_all(&(v.len() as u32).to_le_bytes())?;
            for x in v.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(tmp, path)
}

fn decode(bytes: &[u8]) -> Result<HashMap<CacheKey, Arc<[f32]>>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not an embedding cache file".into());
    }
    let n = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let mut out = HashMap::new();
    for _ in 0..n {
        let key: CacheKey = r.take(32)?.try_into().unwrap();
        let dim = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let raw = r.take(dim * 4)?;
        let v: Arc<[f32]> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(key, v);
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}
