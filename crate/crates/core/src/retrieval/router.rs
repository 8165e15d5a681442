//! Ranks repository databases for a question.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::index::project;
use super::{pool_top_k, retrieve_top_k, AdapterSet, RankSource, RankedEntry, RankedList, RepositoryIndex, RetrievalError, Strategy};
use crate::embedding::{cosine_slices, Embedder, EmbeddingVector};
use crate::scalar::Scalar;
use crate::schema::{table_text, Corpus};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouterConfig {
    pub strategy: Strategy,
    /// Tables averaged into a pooled score.
    pub pool_k: usize,
    /// Statements retrieved per database on the metadata path.
    pub statement_k: usize,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            strategy: Strategy::PooledTables,
            pool_k: 3,
            statement_k: 3,
        }
    }
}

/// Question vectors, one per embedding target.
struct QuestionVectors<T: Scalar> {
    schema: Vec<T>,
    table: Vec<T>,
    statement: Vec<T>,
}

/// Scores databases with an index, the embedder that built it, and the corpus
/// (needed to compose metadata-aware table texts).
pub struct Router<T: Scalar> {
    index: Arc<RepositoryIndex<T>>,
    embedder: Arc<Embedder>,
    adapters: AdapterSet<T>,
    corpus: Arc<Corpus>,
    cfg: RouterConfig,
}

fn cos<T: Scalar>(a: &[T], b: &[T]) -> Result<T, RetrievalError> {
    cosine_slices(a, b).map_err(|source| RetrievalError::Embed {
        what: "similarity".into(),
        source,
    })
}

impl<T: Scalar> Router<T> {
    pub fn new(
        index: Arc<RepositoryIndex<T>>,
        embedder: Arc<Embedder>,
        adapters: AdapterSet<T>,
        corpus: Arc<Corpus>,
        cfg: RouterConfig,
    ) -> Result<Self, RetrievalError> {
        if cfg.pool_k == 0 || cfg.statement_k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        index.check_compatible(embedder.identity(), &adapters)?;
        if let Some(d) = embedder.dim().filter(|&d| d != index.dim()) {
            return Err(RetrievalError::Mismatch(format!("index dimension {} but provider gives {d}", index.dim())));
        }
        let router = Router {
            index,
            embedder,
            adapters,
            corpus,
            cfg,
        };
        router.check_strategy(cfg.strategy)?;
        Ok(router)
    }

    /// Errors unless the index holds what `strategy` needs for every database.
    pub fn check_strategy(&self, strategy: Strategy) -> Result<(), RetrievalError> {
        let g = self.index.header().granularities;
        for db in self.corpus.databases() {
            let id = db.db_id();
            match strategy {
                Strategy::WholeSchema if self.index.db_vector(id).is_none() => {
                    return Err(RetrievalError::MissingVector { granularity: "schema", id: id.into() })
                }
                Strategy::PooledTables | Strategy::PooledTablesMetadata | Strategy::LlmRerank
                    if self.index.table_vectors(id).is_none() && self.index.db_vector(id).is_none() =>
                {
                    return Err(RetrievalError::MissingVector { granularity: "table", id: id.into() })
                }
                _ => {}
            }
        }
        if strategy == Strategy::PooledTablesMetadata && !g.statements {
            return Err(RetrievalError::MissingVector {
                granularity: "statement",
                id: "<all>".into(),
            });
        }
        Ok(())
    }

    pub fn config(&self) -> RouterConfig {
        self.cfg
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn index(&self) -> &RepositoryIndex<T> {
        &self.index
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    fn embed(&self, what: &str, texts: &[String]) -> Result<Vec<EmbeddingVector<T>>, RetrievalError> {
        self.embedder.embed_batch(texts).map_err(|source| RetrievalError::Embed {
            what: what.to_string(),
            source,
        })
    }

    fn question_vectors(&self, question: &str) -> Result<QuestionVectors<T>, RetrievalError> {
        let base = self.embed("question", &[question.to_string()])?.pop().expect("one vector");
        let p = |a| project(a, base.clone()).map(EmbeddingVector::into_values);
        Ok(QuestionVectors {
            schema: p(self.adapters.schema.as_ref())?,
            table: p(self.adapters.table.as_ref())?,
            statement: p(self.adapters.statement.as_ref())?,
        })
    }

    /// The `k` statements of `db` closest to the question. Empty when the
    /// database has no metadata.
    pub fn retrieve_statements(&self, question: &str, db: &str, k: usize) -> Result<Vec<(String, T)>, RetrievalError> {
        let q = self.question_vectors(question)?;
        self.statements_for(&q.statement, db, k)
    }

    fn statements_for(&self, qv: &[T], db: &str, k: usize) -> Result<Vec<(String, T)>, RetrievalError> {
        let Some(items) = self.index.statement_vectors(db) else {
            return Ok(Vec::new());
        };
        let scored = items
            .iter()
            .map(|(id, v)| Ok((id.as_str(), cos(qv, v)?)))
            .collect::<Result<Vec<_>, RetrievalError>>()?;
        Ok(retrieve_top_k(&scored, k))
    }

    fn whole(&self, qv: &[T], db: &str) -> Result<T, RetrievalError> {
        let v = self.index.db_vector(db).ok_or_else(|| RetrievalError::MissingVector {
            granularity: "schema",
            id: db.into(),
        })?;
        cos(qv, v)
    }

    fn pooled(&self, q: &QuestionVectors<T>, db: &str, use_metadata: bool) -> Result<(T, Vec<String>), RetrievalError> {
        let mut sims: Vec<(String, T)> = Vec::new();
        let statements = if use_metadata {
            self.statements_for(&q.statement, db, self.cfg.statement_k)?
        } else {
            Vec::new()
        };
        if !statements.is_empty() {
            let schema = self.corpus.database(db).ok_or_else(|| RetrievalError::UnknownDb(db.into()))?;
            let texts: Vec<&str> = statements
                .iter()
                .filter_map(|(id, _)| schema.statement(id).map(|s| s.text.as_str()))
                .collect();
            let docs: Vec<String> = schema.tables().iter().map(|t| table_text(t, &texts)).collect();
            let vs = self.embed(&format!("metadata tables of `{db}`"), &docs)?;
            for (t, v) in schema.tables().iter().zip(vs) {
                let v = project(self.adapters.table.as_ref(), v)?;
                sims.push((t.name().to_string(), cos(&q.table, v.values())?));
            }
        } else if let Some(items) = self.index.table_vectors(db) {
            for (name, v) in items {
                sims.push((name.clone(), cos(&q.table, v)?));
            }
        } else {
            return Err(RetrievalError::MissingVector {
                granularity: "table",
                id: db.into(),
            });
        }
        Ok(pool_top_k(&sims, self.cfg.pool_k).expect("databases have at least one table"))
    }

    /// Single-database score under `strategy`.
    pub fn score_db(&self, question: &str, db: &str, strategy: Strategy) -> Result<(T, Vec<String>), RetrievalError> {
        let q = self.question_vectors(question)?;
        self.score_with(&q, db, strategy)
    }

    fn score_with(&self, q: &QuestionVectors<T>, db: &str, strategy: Strategy) -> Result<(T, Vec<String>), RetrievalError> {
        match strategy {
            Strategy::WholeSchema => Ok((self.whole(&q.schema, db)?, Vec::new())),
            Strategy::PooledTables => self.pooled(q, db, false),
            Strategy::PooledTablesMetadata => self.pooled(q, db, true),
            Strategy::LlmRerank => Err(RetrievalError::NeedsReranker(strategy)),
        }
    }

    /// Scores every database in `scope` (default: the whole index).
    pub fn rank_databases(
        &self,
        question_id: &str,
        question: &str,
        scope: Option<&BTreeSet<String>>,
        strategy: Strategy,
    ) -> Result<RankedList, RetrievalError> {
        let dbs: Vec<String> = match scope {
            Some(s) => {
                let known: BTreeSet<&str> = self.index.db_ids().collect();
                if let Some(u) = s.iter().find(|d| !known.contains(d.as_str())) {
                    return Err(RetrievalError::UnknownDb(u.clone()));
                }
                s.iter().cloned().collect()
            }
            None => self.index.db_ids().map(str::to_string).collect(),
        };
        if dbs.is_empty() {
            return Err(RetrievalError::EmptyRepository);
        }
        let q = self.question_vectors(question)?;
        let mut entries = Vec::with_capacity(dbs.len());
        for db in dbs {
            let (score, top_tables) = self.score_with(&q, &db, strategy)?;
            entries.push(RankedEntry {
                db_id: db,
                score: score.as_f64(),
                top_tables,
                prior_score: None,
            });
        }
        Ok(RankedList::new(question_id, strategy, entries))
    }
}

impl<T: Scalar> RankSource for Router<T> {
    fn rank(&self, question_id: &str, question: &str, scope: Option<&BTreeSet<String>>) -> Result<RankedList, RetrievalError> {
        self.rank_databases(question_id, question, scope, self.cfg.strategy)
    }

    fn strategy(&self) -> Strategy {
        self.cfg.strategy
    }
}
