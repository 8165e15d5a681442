//! Question-to-database scoring at schema, table and statement granularity.

mod index;
mod router;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::TrainError;
use crate::embedding::EmbedError;
use crate::scalar::{mean, Scalar};

pub use index::{build_index, AdapterSet, Granularities, IndexHeader, RepositoryIndex};
pub use router::{Router, RouterConfig};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding {what}: {source}")]
    Embed {
        what: String,
        #[source]
        source: EmbedError,
    },
    #[error("adapter: {0}")]
    Adapter(#[from] TrainError),
    #[error("index has no {granularity} vector for `{id}`")]
    MissingVector { granularity: &'static str, id: String },
    #[error("no databases in scope")]
    EmptyRepository,
    #[error("unknown database `{0}`")]
    UnknownDb(String),
    #[error("index file {path}: {message}")]
    File { path: String, message: String },
    #[error("index/provider mismatch: {0}")]
    Mismatch(String),
    #[error("unknown strategy `{0}` (expected whole-schema, pooled-tables, pooled-tables+metadata or llm-rerank)")]
    UnknownStrategy(String),
    #[error("strategy {0} needs a re-ranking client")]
    NeedsReranker(Strategy),
    #[error("k must be at least 1")]
    ZeroK,
}

/// How databases are scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "whole-schema")]
    WholeSchema,
    #[serde(rename = "pooled-tables")]
    PooledTables,
    #[serde(rename = "pooled-tables+metadata")]
    PooledTablesMetadata,
    #[serde(rename = "llm-rerank")]
    LlmRerank,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::WholeSchema => "whole-schema",
            Strategy::PooledTables => "pooled-tables",
            Strategy::PooledTablesMetadata => "pooled-tables+metadata",
            Strategy::LlmRerank => "llm-rerank",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whole-schema" | "whole" => Ok(Strategy::WholeSchema),
            "pooled-tables" | "pooled" => Ok(Strategy::PooledTables),
            "pooled-tables+metadata" | "pooled-metadata" | "metadata" => Ok(Strategy::PooledTablesMetadata),
            "llm-rerank" | "rerank" => Ok(Strategy::LlmRerank),
            _ => Err(RetrievalError::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub db_id: String,
    pub score: f64,
    /// Tables that contributed to a pooled score, best first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top_tables: Vec<String>,
    /// Embedding score kept when a re-ranker reorders the list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_score: Option<f64>,
}

/// Every database in scope, best first. Scores never increase down the list
/// and equal scores are ordered by ascending db_id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub question_id: String,
    pub strategy: Strategy,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts entries by score, descending, ties by db_id.
    pub fn new(question_id: impl Into<String>, strategy: Strategy, mut entries: Vec<RankedEntry>) -> Self {
        entries.sort_by(|a, b| cmp_desc(a.score, b.score).then_with(|| a.db_id.cmp(&b.db_id)));
        RankedList {
            question_id: question_id.into(),
            strategy,
            entries,
        }
    }

    pub fn top(&self, k: usize) -> &[RankedEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// 1-based rank of `db_id`.
    pub fn rank_of(&self, db_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.db_id == db_id).map(|p| p + 1)
    }

    pub fn db_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.db_id.as_str()).collect()
    }
}

/// Anything that ranks a repository for a question; the evaluation harness
/// runs against this.
pub trait RankSource: Sync {
    fn rank(
        &self,
        question_id: &str,
        question: &str,
        scope: Option<&BTreeSet<String>>,
    ) -> Result<RankedList, RetrievalError>;

    fn strategy(&self) -> Strategy;
}

fn cmp_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Top `k` items by score, descending, ties by id. Fewer when there are fewer items.
pub fn retrieve_top_k<T: Scalar, I: AsRef<str>>(scored: &[(I, T)], k: usize) -> Vec<(String, T)> {
    let mut v: Vec<(&str, T)> = scored.iter().map(|(i, s)| (i.as_ref(), *s)).collect();
    v.sort_by(|a, b| cmp_desc(a.1.as_f64(), b.1.as_f64()).then_with(|| a.0.cmp(b.0)));
    v.truncate(k);
    v.into_iter().map(|(i, s)| (i.to_string(), s)).collect()
}

/// Mean of the `k` highest table similarities (all of them when fewer than
/// `k`), with the contributing table names best first.
pub fn pool_top_k<T: Scalar, I: AsRef<str>>(table_sims: &[(I, T)], k: usize) -> Option<(T, Vec<String>)> {
    if table_sims.is_empty() || k == 0 {
        return None;
    }
    let top = retrieve_top_k(table_sims, k);
    let sims: Vec<T> = top.iter().map(|(_, s)| *s).collect();
    Some((mean(&sims), top.into_iter().map(|(n, _)| n).collect()))
}
