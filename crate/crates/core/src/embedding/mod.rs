//! Embedding access: providers, truncation, caching and cosine similarity.

mod cache;
mod embedder;
mod provider;
mod truncate;

use crate::scalar::{dot, l2_norm, Scalar};

pub use cache::EmbeddingCache;
pub use embedder::{EmbedConfig, Embedder};
pub use provider::{DeterministicTestProvider, EmbeddingProvider, HttpProvider, HttpProviderConfig, EMBED_URL_ENV};
pub use truncate::{proxy_token_count, truncate, DEFAULT_TOKEN_BUDGET};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("empty vector")]
    Empty,
    #[error("non-finite component in vector")]
    NonFinite,
    #[error("empty batch")]
    EmptyBatch,
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("transport: {0}")]
    Transport(String),
    #[error("provider error (status {status}): {message}")]
    Remote { status: u16, message: String },
    #[error("cache file {path}: {message}")]
    Cache { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Dense embedding of one text.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector<T: Scalar> {
    values: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(EmbeddingVector {
            values,
            normalized: false,
        })
    }

    /// Scales to unit L2 norm.
    pub fn normalized(values: Vec<T>) -> Result<Self, EmbedError> {
        Self::new(values)?.normalize()
    }

    pub fn normalize(mut self) -> Result<Self, EmbedError> {
        let n = l2_norm(&self.values);
        if n == T::zero() {
            return Err(EmbedError::ZeroVector);
        }
        for v in &mut self.values {
            *v /= n;
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
            normalized: self.normalized,
        }
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T, EmbedError> {
    cosine_slices(a.values(), b.values())
}

pub fn cosine_slices<T: Scalar>(a: &[T], b: &[T]) -> Result<T, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(EmbedError::ZeroVector);
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}
