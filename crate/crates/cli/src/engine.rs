//! Loading a routing engine (corpus, embedder, index, adapters, re-ranker)
//! from command-line or config-file options.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use dbrouter_core::embedding::{
    DeterministicTestProvider, EmbedConfig, Embedder, EmbeddingCache, EmbeddingProvider, HttpProvider,
    HttpProviderConfig,
};
use dbrouter_core::rerank::{
    ChatClient, HttpChatClient, LlmConfig, MockChatClient, MockMode, RecordingChatClient, RerankConfig,
    RerankError, ReplayChatClient,
};
use dbrouter_core::retrieval::{build_index, Granularities, RankSource, RankedList, RetrievalError, RouterConfig, Strategy};
use dbrouter_core::schema::Corpus;
use dbrouter_core::{Adapter, Adapters, DbRouter, Index, LlmReranker};

use crate::UsageError;

/// Embedding provider options.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct EmbedArgs {
    /// `test:<dim>:<seed>` (offline hashed vectors) or `remote:<model>`.
    #[arg(long, env = "DBROUTER_PROVIDER")]
    pub provider: Option<String>,
    /// Base URL of the embedding service for `remote:` providers.
    #[arg(long, env = "DBROUTER_EMBED_URL")]
    pub embed_url: Option<String>,
    /// Persistent embedding cache file.
    #[arg(long, env = "DBROUTER_CACHE")]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub token_budget: Option<usize>,
}

impl EmbedArgs {
    pub fn or(self, file: EmbedArgs) -> EmbedArgs {
        EmbedArgs {
            provider: self.provider.or(file.provider),
            embed_url: self.embed_url.or(file.embed_url),
            cache: self.cache.or(file.cache),
            token_budget: self.token_budget.or(file.token_budget),
        }
    }

    pub fn embedder(&self) -> Result<Arc<Embedder>> {
        let spec = self
            .provider
            .as_deref()
            .ok_or_else(|| UsageError("no embedding provider given (--provider or DBROUTER_PROVIDER)".into()))?;
        let provider: Arc<dyn EmbeddingProvider> = match spec.split_once(':') {
            Some(("test", rest)) => {
                let (dim, seed) = rest.split_once(':').unwrap_or((rest, "0"));
                let dim = dim.parse().map_err(|_| UsageError(format!("bad dimension in provider `{spec}`")))?;
                let seed = seed.parse().map_err(|_| UsageError(format!("bad seed in provider `{spec}`")))?;
                Arc::new(DeterministicTestProvider::new(dim, seed)?)
            }
            Some(("remote", model)) => {
                let url = self
                    .embed_url
                    .clone()
                    .ok_or_else(|| UsageError("remote provider needs --embed-url or DBROUTER_EMBED_URL".into()))?;
                Arc::new(HttpProvider::new(HttpProviderConfig::new(url, model)))
            }
            _ => bail!(UsageError(format!("unknown provider `{spec}` (expected test:<dim>:<seed> or remote:<model>)"))),
        };
        let cache = match &self.cache {
            Some(p) => EmbeddingCache::open(p)?,
            None => EmbeddingCache::in_memory(),
        };
        let mut cfg = EmbedConfig::default();
        if let Some(b) = self.token_budget {
            cfg.token_budget = b;
        }
        Ok(Arc::new(Embedder::new(provider, Arc::new(cache), cfg)?))
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct AdapterArgs {
    #[arg(long)]
    pub schema_adapter: Option<PathBuf>,
    #[arg(long)]
    pub table_adapter: Option<PathBuf>,
    #[arg(long)]
    pub statement_adapter: Option<PathBuf>,
}

impl AdapterArgs {
    pub fn or(self, file: AdapterArgs) -> AdapterArgs {
        AdapterArgs {
            schema_adapter: self.schema_adapter.or(file.schema_adapter),
            table_adapter: self.table_adapter.or(file.table_adapter),
            statement_adapter: self.statement_adapter.or(file.statement_adapter),
        }
    }

    pub fn load(&self) -> Result<Adapters> {
        let one = |p: &Option<PathBuf>| -> Result<Option<Adapter>> {
            p.as_ref()
                .map(|p| Adapter::load(p).with_context(|| format!("loading adapter {}", p.display())))
                .transpose()
        };
        Ok(Adapters {
            schema: one(&self.schema_adapter)?,
            table: one(&self.table_adapter)?,
            statement: one(&self.statement_adapter)?,
        })
    }
}

/// Everything needed to rank databases.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct EngineArgs {
    /// Corpus manifest directory.
    #[arg(long, alias = "dataset", env = "DBROUTER_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Index file; built in memory from the manifest when absent.
    #[arg(long, env = "DBROUTER_INDEX")]
    pub index: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub adapters: AdapterArgs,
    /// whole-schema, pooled-tables, pooled-tables+metadata or llm-rerank.
    #[arg(long, env = "DBROUTER_STRATEGY")]
    pub strategy: Option<String>,
    /// Tables averaged into a pooled score.
    #[arg(long)]
    pub pool_k: Option<usize>,
    /// Statements retrieved per database for metadata-aware scoring.
    #[arg(long)]
    pub statement_k: Option<usize>,
    /// Databases passed to the re-ranker.
    #[arg(long)]
    pub shortlist: Option<usize>,
    /// Tables shown per database in the re-ranking prompt.
    #[arg(long)]
    pub tables: Option<usize>,
    #[arg(long)]
    pub max_prompt_tokens: Option<usize>,
    /// Embedding strategy producing the re-ranking shortlist.
    #[arg(long)]
    pub base_strategy: Option<String>,
    /// `http`, `mock:echo`, `mock:reverse`, `mock:fail`, `mock:fixed:<reply>` or `replay:<file>`.
    #[arg(long, env = "DBROUTER_LLM")]
    pub llm: Option<String>,
    #[arg(long, env = "DBROUTER_LLM_URL")]
    pub llm_url: Option<String>,
    #[arg(long, env = "DBROUTER_LLM_MODEL")]
    pub llm_model: Option<String>,
    /// Save every chat reply to this replay file.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

impl EngineArgs {
    pub fn or(self, file: EngineArgs) -> EngineArgs {
        EngineArgs {
            manifest: self.manifest.or(file.manifest),
            index: self.index.or(file.index),
            embed: self.embed.or(file.embed),
            adapters: self.adapters.or(file.adapters),
            strategy: self.strategy.or(file.strategy),
            pool_k: self.pool_k.or(file.pool_k),
            statement_k: self.statement_k.or(file.statement_k),
            shortlist: self.shortlist.or(file.shortlist),
            tables: self.tables.or(file.tables),
            max_prompt_tokens: self.max_prompt_tokens.or(file.max_prompt_tokens),
            base_strategy: self.base_strategy.or(file.base_strategy),
            llm: self.llm.or(file.llm),
            llm_url: self.llm_url.or(file.llm_url),
            llm_model: self.llm_model.or(file.llm_model),
            record: self.record.or(file.record),
        }
    }

    pub fn strategy(&self) -> Result<Strategy> {
        parse_strategy(self.strategy.as_deref().unwrap_or("pooled-tables"))
    }

    fn rerank_config(&self) -> Result<RerankConfig> {
        let mut cfg = RerankConfig::default();
        if let Some(v) = self.shortlist {
            cfg.shortlist = v;
        }
        if let Some(v) = self.tables {
            cfg.tables = v;
        }
        if let Some(v) = self.max_prompt_tokens {
            cfg.max_prompt_tokens = v;
        }
        if let Some(s) = &self.base_strategy {
            cfg.base = parse_strategy(s)?;
        }
        Ok(cfg)
    }

    fn chat_client(&self) -> Result<Arc<dyn ChatClient>> {
        let spec = self
            .llm
            .as_deref()
            .ok_or_else(|| UsageError("llm-rerank needs --llm (or DBROUTER_LLM)".into()))?;
        let client: Arc<dyn ChatClient> = match spec {
            "http" => {
                let cfg = match (&self.llm_url, &self.llm_model) {
                    (Some(u), Some(m)) => LlmConfig::new(u, m),
                    _ => LlmConfig::from_env()?,
                };
                Arc::new(HttpChatClient::new(cfg))
            }
            "mock:echo" => Arc::new(MockChatClient::new(MockMode::Echo)),
            "mock:reverse" => Arc::new(MockChatClient::new(MockMode::Reverse)),
            "mock:fail" => Arc::new(MockChatClient::new(MockMode::Fail)),
            s => {
                if let Some(reply) = s.strip_prefix("mock:fixed:") {
                    Arc::new(MockChatClient::new(MockMode::Fixed(reply.to_string())))
                } else if let Some(path) = s.strip_prefix("replay:") {
                    Arc::new(ReplayChatClient::load(path)?)
                } else {
                    bail!(UsageError(format!("unknown llm client `{s}`")))
                }
            }
        };
        Ok(client)
    }
}

pub fn parse_strategy(s: &str) -> Result<Strategy> {
    s.parse::<Strategy>().map_err(|e| UsageError(e.to_string()).into())
}

/// Lets a shared trait object sit inside the generic recording client.
pub struct SharedClient(pub Arc<dyn ChatClient>);

impl ChatClient for SharedClient {
    fn complete(&self, prompt: &str) -> Result<String, RerankError> {
        self.0.complete(prompt)
    }
}

/// A loaded corpus with its router and, when configured, a re-ranker.
pub struct Engine {
    pub corpus: Arc<Corpus>,
    pub router: Arc<DbRouter>,
    pub reranker: Option<LlmReranker>,
    pub strategy: Strategy,
    recorder: Option<(Arc<RecordingChatClient<SharedClient>>, PathBuf)>,
}

pub fn load_corpus(path: Option<&Path>) -> Result<Corpus> {
    let path = path.ok_or_else(|| UsageError("no corpus given (--manifest)".into()))?;
    Corpus::load(path).with_context(|| format!("loading corpus {}", path.display()))
}

impl Engine {
    pub fn load(args: &EngineArgs) -> Result<Engine> {
        let strategy = args.strategy()?;
        let corpus = Arc::new(load_corpus(args.manifest.as_deref())?);
        let embedder = args.embed.embedder()?;
        let adapters = args.adapters.load()?;
        let index: Index = match &args.index {
            Some(p) => Index::load(p).with_context(|| format!("loading index {}", p.display()))?,
            None => {
                log::info!("no index file given; embedding the corpus in memory");
                build_index(&corpus, &embedder, &adapters, Granularities::default())?
            }
        };
        let rcfg = args.rerank_config()?;
        let mut cfg = RouterConfig {
            strategy: if strategy == Strategy::LlmRerank { rcfg.base } else { strategy },
            ..RouterConfig::default()
        };
        if let Some(k) = args.pool_k {
            cfg.pool_k = k;
        }
        if let Some(k) = args.statement_k {
            cfg.statement_k = k;
        }
        let router = Arc::new(DbRouter::new(Arc::new(index), embedder.clone(), adapters, corpus.clone(), cfg)?);
        let (reranker, recorder) = if strategy == Strategy::LlmRerank || args.llm.is_some() {
            let mut client = args.chat_client()?;
            let mut recorder = None;
            if let Some(path) = &args.record {
                let rec = Arc::new(RecordingChatClient::new(SharedClient(client)));
                recorder = Some((rec.clone(), path.clone()));
                client = rec;
            }
            (Some(LlmReranker::new(router.clone(), client, rcfg)?), recorder)
        } else {
            (None, None)
        };
        Ok(Engine {
            corpus,
            router,
            reranker,
            strategy,
            recorder,
        })
    }

    pub fn db_count(&self) -> usize {
        self.router.index().db_ids().count()
    }

    /// Ranks with an explicit strategy.
    pub fn rank(
        &self,
        question_id: &str,
        question: &str,
        scope: Option<&BTreeSet<String>>,
        strategy: Strategy,
    ) -> Result<RankedList, RetrievalError> {
        match strategy {
            Strategy::LlmRerank => match &self.reranker {
                Some(r) => r.rank(question_id, question, scope),
                None => Err(RetrievalError::NeedsReranker(strategy)),
            },
            s => self.router.rank_databases(question_id, question, scope, s),
        }
    }

    /// Ranking source fixed to `strategy`.
    pub fn source(&self, strategy: Strategy) -> Result<FixedStrategy<'_>> {
        match strategy {
            Strategy::LlmRerank if self.reranker.is_none() => Err(RetrievalError::NeedsReranker(strategy).into()),
            Strategy::LlmRerank => Ok(FixedStrategy { engine: self, strategy }),
            s => {
                self.router.check_strategy(s)?;
                Ok(FixedStrategy { engine: self, strategy: s })
            }
        }
    }

    /// Writes the replay file (when recording) and flushes the embedding cache.
    pub fn finish(&self) -> Result<()> {
        if let Some((rec, path)) = &self.recorder {
            rec.save(path)?;
        }
        self.router.embedder().cache().flush()?;
        Ok(())
    }

    pub fn incidents(&self) -> Vec<dbrouter_core::rerank::Incident> {
        self.reranker.as_ref().map(|r| r.incidents().snapshot()).unwrap_or_default()
    }
}

pub struct FixedStrategy<'a> {
    engine: &'a Engine,
    strategy: Strategy,
}

impl RankSource for FixedStrategy<'_> {
    fn rank(&self, question_id: &str, question: &str, scope: Option<&BTreeSet<String>>) -> Result<RankedList, RetrievalError> {
        self.engine.rank(question_id, question, scope, self.strategy)
    }

    fn strategy(&self) -> Strategy {
        self.strategy
    }
}
