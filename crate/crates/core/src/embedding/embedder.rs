//! Cached, batched, truncating front end over a provider.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use super::cache::{CacheKey, EmbeddingCache};
use super::{truncate, EmbedError, EmbeddingProvider, EmbeddingVector, DEFAULT_TOKEN_BUDGET};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct EmbedConfig {
    pub token_budget: usize,
    pub batch_size: usize,
    /// Maximum concurrent provider calls.
    pub max_in_flight: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            token_budget: DEFAULT_TOKEN_BUDGET,
            batch_size: 32,
            max_in_flight: 4,
        }
    }
}

pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    identity: String,
    cache: Arc<EmbeddingCache>,
    cfg: EmbedConfig,
    /// Dimension seen so far; 0 until the first vector.
    dim: AtomicUsize,
}

impl Embedder {
    pub fn new(
        provider: Arc<dyn EmbeddingProvider>,
        cache: Arc<EmbeddingCache>,
        cfg: EmbedConfig,
    ) -> Result<Self, EmbedError> {
        if cfg.token_budget == 0 || cfg.batch_size == 0 || cfg.max_in_flight == 0 {
            return Err(EmbedError::Config(
                "token budget, batch size and in-flight limit must be at least 1".into(),
            ));
        }
        Ok(Embedder {
            identity: provider.identity(),
            provider,
            cache,
            cfg,
            dim: AtomicUsize::new(0),
        })
    }

    /// Embedder with an in-memory cache and default settings.
    pub fn uncached(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self::new(provider, Arc::new(EmbeddingCache::in_memory()), EmbedConfig::default())
            .expect("default config is valid")
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    /// Dimension of vectors produced so far, if any.
    pub fn dim(&self) -> Option<usize> {
        match self.dim.load(Ordering::Acquire) {
            0 => None,
            d => Some(d),
        }
    }

    fn check_dim(&self, got: usize) -> Result<(), EmbedError> {
        match self.dim.compare_exchange(0, got, Ordering::AcqRel, Ordering::Acquire) {
            Ok(_) => Ok(()),
            Err(expected) if expected == got => Ok(()),
            Err(expected) => Err(EmbedError::DimensionMismatch { expected, got }),
        }
    }

    pub fn embed_one<T: Scalar>(&self, text: &str) -> Result<EmbeddingVector<T>, EmbedError> {
        Ok(self.embed_batch(&[text])?.pop().expect("one vector"))
    }

    /// One normalized vector per text, in input order.
    pub fn embed_batch<T: Scalar, S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector<T>>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyBatch);
        }
        let cut: Vec<&str> = texts
            .iter()
            .map(|t| {
                let c = truncate(t.as_ref(), self.cfg.token_budget);
                if c.len() < t.as_ref().len() {
                    log::info!(
                        "text of {} bytes truncated to {} bytes for a {}-token budget",
                        t.as_ref().len(),
                        c.len(),
                        self.cfg.token_budget
                    );
                }
                c
            })
            .collect();
        let keys: Vec<CacheKey> = cut.iter().map(|t| EmbeddingCache::key(&self.identity, t)).collect();

        let mut missing: Vec<(CacheKey, String)> = Vec::new();
        let mut queued: HashMap<CacheKey, ()> = HashMap::new();
        for (k, t) in keys.iter().zip(&cut) {
            if self.cache.get(k).is_none() && queued.insert(*k, ()).is_none() {
                missing.push((*k, t.to_string()));
            }
        }
        if !missing.is_empty() {
            self.fetch(&missing)?;
        }

        keys.iter()
            .map(|k| {
                let v = self.cache.get(k).expect("fetched");
                self.check_dim(v.len())?;
                EmbeddingVector::normalized(v.iter().map(|&x| T::of(x as f64)).collect())
            })
            .collect()
    }

    fn fetch(&self, missing: &[(CacheKey, String)]) -> Result<(), EmbedError> {
        let chunks: Vec<&[(CacheKey, String)]> = missing.chunks(self.cfg.batch_size).collect();
        let next = AtomicUsize::new(0);
        let failure: Mutex<Option<EmbedError>> = Mutex::new(None);
        let workers = self.cfg.max_in_flight.min(chunks.len());
        let run = || loop {
            let i = next.fetch_add(1, Ordering::Relaxed);
            if i >= chunks.len() || failure.lock().unwrap().is_some() {
                return;
            }
            if let Err(e) = self.fetch_chunk(chunks[i]) {
                failure.lock().unwrap().get_or_insert(e);
            }
        };
        if workers == 1 {
            run();
        } else {
            thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(run);
                }
            });
        }
        match failure.into_inner().unwrap() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn fetch_chunk(&self, chunk: &[(CacheKey, String)]) -> Result<(), EmbedError> {
        let texts: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
        let vectors = self.provider.embed_raw(&texts)?;
        if vectors.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                got: vectors.len(),
            });
        }
        for v in &vectors {
            self.check_dim(v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite);
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(EmbedError::ZeroVector);
            }
        }
        for ((k, _), v) in chunk.iter().zip(vectors) {
            self.cache.insert(*k, Arc::from(v));
        }
        Ok(())
    }
}
