//! Chat-completion clients: HTTP, mock, record and replay.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::RerankError;

pub const LLM_URL_ENV: &str = "DBROUTER_LLM_URL";
pub const LLM_MODEL_ENV: &str = "DBROUTER_LLM_MODEL";

pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, RerankError>;
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Clone, Debug)]
pub struct LlmConfig {
    /// Base URL or full `.../chat/completions` endpoint.
    pub url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

impl LlmConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        LlmConfig {
            url: url.into(),
            model: model.into(),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
            retries: 2,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn from_env() -> Result<Self, RerankError> {
        let get = |k: &str| std::env::var(k).map_err(|_| RerankError::Config(format!("{k} is not set")));
        Ok(Self::new(get(LLM_URL_ENV)?, get(LLM_MODEL_ENV)?))
    }

    fn endpoint(&self) -> String {
        let base = self.url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/v1/chat/completions")
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

pub struct HttpChatClient {
    cfg: LlmConfig,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(cfg: LlmConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatClient { cfg, agent }
    }

    fn attempt(&self, prompt: &str) -> Result<String, (bool, RerankError)> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        });
        let mut resp = self
            .agent
            .post(&self.cfg.endpoint())
            .send_json(&body)
            .map_err(|e| (true, RerankError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let message = resp.body_mut().read_to_string().unwrap_or_default();
            return Err((status == 429 || status >= 500, RerankError::Remote { status, message }));
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, RerankError::Transport(format!("bad response body: {e}"))))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or((false, RerankError::Transport("response has no choices".into())))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String, RerankError> {
        let mut delay = self.cfg.backoff;
        let mut tries = 0;
        loop {
            match self.attempt(prompt) {
                Ok(r) => return Ok(r),
                Err((true, e)) if tries < self.cfg.retries => {
                    log::warn!("chat request failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    tries += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MockMode {
    /// Answers with the first three candidates in prompt order.
    Echo,
    /// Answers with the candidates in reverse prompt order.
    Reverse,
    /// Always answers with this text.
    Fixed(String),
    /// Always fails with a transport error.
    Fail,
}

/// Network-free client for tests and offline runs.
pub struct MockChatClient {
    mode: MockMode,
}

impl MockChatClient {
    pub fn new(mode: MockMode) -> Self {
        MockChatClient { mode }
    }

    fn names(prompt: &str) -> Vec<&str> {
        prompt
            .lines()
            .filter_map(|l| l.strip_prefix("Database "))
            .filter_map(|l| {
                let (n, name) = l.split_once(": ")?;
                n.parse::<usize>().ok().map(|_| name)
            })
            .collect()
    }
}

impl ChatClient for MockChatClient {
    fn complete(&self, prompt: &str) -> Result<String, RerankError> {
        let mut names = Self::names(prompt);
        match &self.mode {
            MockMode::Echo => {}
            MockMode::Reverse => names.reverse(),
            MockMode::Fixed(s) => return Ok(s.clone()),
            MockMode::Fail => return Err(RerankError::Transport("mock failure".into())),
        }
        names.truncate(3);
        Ok(format!("<{}>", names.join(",")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub prompt_digest: String,
    pub response: String,
}

fn fixture_err(path: &Path, message: String) -> RerankError {
    RerankError::Fixture {
        path: path.display().to_string(),
        message,
    }
}

/// Serves recorded responses keyed by the prompt's sha256.
pub struct ReplayChatClient {
    responses: HashMap<String, String>,
}

impl ReplayChatClient {
    pub fn new(entries: Vec<ReplayEntry>) -> Self {
        ReplayChatClient {
            responses: entries.into_iter().map(|e| (e.prompt_digest, e.response)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RerankError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| fixture_err(path, e.to_string()))?;
        let entries: Vec<ReplayEntry> = serde_json::from_str(&text).map_err(|e| fixture_err(path, e.to_string()))?;
        Ok(Self::new(entries))
    }
}

impl ChatClient for ReplayChatClient {
    fn complete(&self, prompt: &str) -> Result<String, RerankError> {
        let d = prompt_digest(prompt);
        self.responses.get(&d).cloned().ok_or(RerankError::ReplayMiss(d))
    }
}

/// Passes calls through and keeps every (prompt digest, response) pair.
pub struct RecordingChatClient<C: ChatClient> {
    inner: C,
    log: Mutex<Vec<ReplayEntry>>,
}

impl<C: ChatClient> RecordingChatClient<C> {
    pub fn new(inner: C) -> Self {
        RecordingChatClient {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Recorded entries, sorted by digest and de-duplicated.
    pub fn entries(&self) -> Vec<ReplayEntry> {
        let mut v = self.log.lock().expect("record lock").clone();
        v.sort_by(|a, b| a.prompt_digest.cmp(&b.prompt_digest));
        v.dedup_by(|a, b| a.prompt_digest == b.prompt_digest);
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RerankError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.entries()).expect("entries serialize");
        text.push('\n');
        fs::write(path, text).map_err(|e| fixture_err(path, e.to_string()))
    }
}

impl<C: ChatClient> ChatClient for RecordingChatClient<C> {
    fn complete(&self, prompt: &str) -> Result<String, RerankError> {
        let response = self.inner.complete(prompt)?;
        self.log.lock().expect("record lock").push(ReplayEntry {
            prompt_digest: prompt_digest(prompt),
            response: response.clone(),
        });
        Ok(response)
    }
}
