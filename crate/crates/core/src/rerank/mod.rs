//! Re-ranking of an embedding shortlist with a chat-completion model.

mod client;
mod prompt;

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::retrieval::{RankSource, RankedEntry, RankedList, RetrievalError, Router, Strategy};
use crate::scalar::Scalar;
use crate::schema::Corpus;

pub use client::{
    prompt_digest, ChatClient, HttpChatClient, LlmConfig, MockChatClient, MockMode, RecordingChatClient,
    ReplayChatClient, ReplayEntry, LLM_MODEL_ENV, LLM_URL_ENV,
};
pub use prompt::{build_prompt, fit_to_budget, parse_ranking, prompt_tokens, RerankCandidate};

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("no candidates to re-rank")]
    NoCandidates,
    #[error("prompt needs {needed} tokens even with one candidate and one table; budget is {max_tokens}")]
    Budget { needed: usize, max_tokens: usize },
    #[error("no database name in the reply could be matched: {0:?}")]
    Unparseable(String),
    #[error("chat transport: {0}")]
    Transport(String),
    #[error("chat endpoint returned status {status}: {message}")]
    Remote { status: u16, message: String },
    #[error("no recorded response for prompt digest {0}")]
    ReplayMiss(String),
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RerankConfig {
    /// Databases sent to the model.
    pub shortlist: usize,
    /// Tables shown per database.
    pub tables: usize,
    pub max_prompt_tokens: usize,
    /// Embedding strategy that produces the shortlist.
    pub base: Strategy,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            shortlist: 10,
            tables: 3,
            max_prompt_tokens: 8000,
            base: Strategy::PooledTables,
        }
    }
}

/// A re-ranking call that fell back to the embedding order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub question_id: String,
    pub message: String,
}

/// Append-only, shareable across threads.
#[derive(Debug, Default)]
pub struct IncidentLog {
    entries: Mutex<Vec<Incident>>,
}

impl IncidentLog {
    pub fn record(&self, question_id: &str, message: impl Into<String>) {
        let message = message.into();
        log::warn!("re-ranking fell back to embedding order for {question_id}: {message}");
        self.entries.lock().expect("incident lock").push(Incident {
            question_id: question_id.to_string(),
            message,
        });
    }

    pub fn snapshot(&self) -> Vec<Incident> {
        let mut v = self.entries.lock().expect("incident lock").clone();
        v.sort_by(|a, b| a.question_id.cmp(&b.question_id).then_with(|| a.message.cmp(&b.message)));
        v
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("incident lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn candidates(ranked: &RankedList, corpus: &Corpus, cfg: &RerankConfig) -> Vec<RerankCandidate> {
    ranked
        .top(cfg.shortlist)
        .iter()
        .filter_map(|e| {
            let db = corpus.database(&e.db_id)?;
            let names: Vec<&str> = if e.top_tables.is_empty() {
                db.tables().iter().map(|t| t.name()).collect()
            } else {
                e.top_tables.iter().map(String::as_str).collect()
            };
            Some(RerankCandidate::new(db, &names[..cfg.tables.min(names.len())]))
        })
        .collect()
}

fn try_rerank(
    question: &str,
    ranked: &RankedList,
    corpus: &Corpus,
    client: &dyn ChatClient,
    cfg: &RerankConfig,
) -> Result<Vec<String>, RerankError> {
    let cands = fit_to_budget(question, &candidates(ranked, corpus, cfg), cfg.max_prompt_tokens)?;
    let prompt = build_prompt(question, &cands);
    let reply = client.complete(&prompt)?;
    let shortlist: Vec<String> = cands.iter().map(|c| c.db_id.clone()).collect();
    parse_ranking(&reply, &shortlist)
}

/// Moves the model's top picks to the head of `ranked`; the rest keep their
/// embedding order. On any failure the embedding order is kept and an
/// incident is recorded.
pub fn rerank(
    question: &str,
    ranked: &RankedList,
    corpus: &Corpus,
    client: &dyn ChatClient,
    cfg: &RerankConfig,
    incidents: &IncidentLog,
) -> RankedList {
    let head = match try_rerank(question, ranked, corpus, client, cfg) {
        Ok(h) => h,
        Err(e) => {
            incidents.record(&ranked.question_id, e.to_string());
            Vec::new()
        }
    };
    let mut order: Vec<&RankedEntry> = head
        .iter()
        .filter_map(|id| ranked.entries.iter().find(|e| &e.db_id == id))
        .collect();
    order.extend(ranked.entries.iter().filter(|e| !head.contains(&e.db_id)));
    let n = order.len() as f64;
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(i, e)| RankedEntry {
            db_id: e.db_id.clone(),
            score: (n - i as f64) / n,
            top_tables: e.top_tables.clone(),
            prior_score: Some(e.prior_score.unwrap_or(e.score)),
        })
        .collect();
    RankedList {
        question_id: ranked.question_id.clone(),
        strategy: Strategy::LlmRerank,
        entries,
    }
}

/// Embedding shortlist followed by model re-ranking.
pub struct Reranker<T: Scalar> {
    router: Arc<Router<T>>,
    client: Arc<dyn ChatClient>,
    cfg: RerankConfig,
    incidents: Arc<IncidentLog>,
}

impl<T: Scalar> Reranker<T> {
    pub fn new(router: Arc<Router<T>>, client: Arc<dyn ChatClient>, cfg: RerankConfig) -> Result<Self, RetrievalError> {
        if cfg.base == Strategy::LlmRerank {
            return Err(RetrievalError::UnknownStrategy("llm-rerank cannot be its own base".into()));
        }
        if cfg.shortlist == 0 || cfg.tables == 0 {
            return Err(RetrievalError::ZeroK);
        }
        router.check_strategy(cfg.base)?;
        Ok(Reranker {
            router,
            client,
            cfg,
            incidents: Arc::new(IncidentLog::default()),
        })
    }

    pub fn incidents(&self) -> &IncidentLog {
        &self.incidents
    }
}

impl<T: Scalar> RankSource for Reranker<T> {
    fn rank(&self, question_id: &str, question: &str, scope: Option<&BTreeSet<String>>) -> Result<RankedList, RetrievalError> {
        let base = self.router.rank_databases(question_id, question, scope, self.cfg.base)?;
        Ok(rerank(question, &base, self.router.corpus(), self.client.as_ref(), &self.cfg, &self.incidents))
    }

    fn strategy(&self) -> Strategy {
        Strategy::LlmRerank
    }
}
