//! Embedding backends.

use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbedError;

pub const EMBED_URL_ENV: &str = "DBROUTER_EMBED_URL";

/// Turns texts into raw vectors. Implementations must be deterministic for a
/// given identity, since cached vectors are keyed by it.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identity; part of every cache key and recorded in indexes.
    fn identity(&self) -> String;

    /// One vector per text, in order. Texts are already truncated.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Hashed bag-of-words vectors: each lower-cased alphanumeric token maps to
/// a seeded uniform random vector and a text is the normalized sum of its tokens.
/// Texts sharing words get similar vectors, which is enough for end-to-end
/// tests without a model.
#[derive(Clone, Debug)]
pub struct DeterministicTestProvider {
    dim: usize,
    seed: u64,
}

impl DeterministicTestProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::Config("dimension must be at least 1".into()));
        }
        Ok(DeterministicTestProvider { dim, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn token_vector(&self, token: &str, acc: &mut [f64]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut rng = ChaCha8Rng::from_seed(digest.into());
        for a in acc.iter_mut() {
            *a += rng.random_range(-1.0..1.0);
        }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        let mut any = false;
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            self.token_vector(&token.to_lowercase(), &mut acc);
            any = true;
        }
        if !any {
            self.token_vector(&format!("\u{0}{text}"), &mut acc);
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        acc.iter().map(|x| (x / norm) as f32).collect()
    }
}

impl EmbeddingProvider for DeterministicTestProvider {
    fn identity(&self) -> String {
        format!("test:d{}:s{}", self.dim, self.seed)
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[derive(Clone, Debug)]
pub struct HttpProviderConfig {
    /// Base URL; requests go to `{url}/v1/embed`.
    pub url: String,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

impl HttpProviderConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpProviderConfig {
            url: url.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(200),
        }
    }

    /// Reads the base URL from `DBROUTER_EMBED_URL`.
    pub fn from_env(model: impl Into<String>) -> Result<Self, EmbedError> {
        let url = std::env::var(EMBED_URL_ENV)
            .map_err(|_| EmbedError::Config(format!("{EMBED_URL_ENV} is not set")))?;
        Ok(Self::new(url, model))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Client for the `/v1/embed` wire protocol.
pub struct HttpProvider {
    cfg: HttpProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(cfg: HttpProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider { cfg, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/embed", self.cfg.url.trim_end_matches('/'))
    }

    fn attempt(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, (bool, EmbedError)> {
        let body = EmbedRequest {
            model: &self.cfg.model,
            texts,
        };
        let mut resp = self
            .agent
            .post(&self.endpoint())
            .send_json(&body)
            .map_err(|e| (true, EmbedError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let message = resp
                .body_mut()
                .read_json::<ErrorBody>()
                .map(|b| b.error)
                .unwrap_or_else(|_| "unreadable error body".into());
            let retry = status == 429 || status >= 500;
            return Err((retry, EmbedError::Remote { status, message }));
        }
        let parsed: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, EmbedError::Transport(format!("bad response body: {e}"))))?;
        if parsed.vectors.len() != texts.len() {
            return Err((
                false,
                EmbedError::CountMismatch {
                    expected: texts.len(),
                    got: parsed.vectors.len(),
                },
            ));
        }
        if let Some(v) = parsed.vectors.iter().find(|v| v.len() != parsed.dim) {
            return Err((
                false,
                EmbedError::DimensionMismatch {
                    expected: parsed.dim,
                    got: v.len(),
                },
            ));
        }
        Ok(parsed.vectors)
    }
}

impl EmbeddingProvider for HttpProvider {
    fn identity(&self) -> String {
        format!("remote:{}#{}", self.cfg.url.trim_end_matches('/'), self.cfg.model)
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut delay = self.cfg.backoff;
        let mut tries = 0;
        loop {
            match self.attempt(texts) {
                Ok(v) => return Ok(v),
                Err((true, e)) if tries < self.cfg.retries => {
                    log::warn!("embedding request failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    tries += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}
