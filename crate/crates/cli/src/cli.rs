use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::engine::{AdapterArgs, EmbedArgs, EngineArgs};
use crate::server::ServeArgs;

#[derive(Parser, Debug)]
#[command(name = "dbrouter", version, about = "Route natural-language questions to the database that can answer them.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert or validate a corpus and write it as a manifest directory.
    Ingest(IngestArgs),
    /// Build splits, training pairs and database subsets.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Build or inspect an embedding index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Train a linear adapter on a pair file.
    Train(TrainArgs),
    /// Rank the repository for one question.
    Route(RouteArgs),
    /// Evaluate a strategy on a question set and write a report.
    Eval(EvalArgs),
    /// Run one of the experiment protocols.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Serve routing over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct IngestArgs {
    /// Output manifest directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Spider release directory (tables.json, train_spider.json, dev.json).
    #[arg(long, group = "source")]
    pub from_spider: Option<PathBuf>,
    /// BIRD release directory.
    #[arg(long, group = "source")]
    pub from_bird: Option<PathBuf>,
    /// Existing manifest directory to validate and rewrite.
    #[arg(long, group = "source")]
    pub from_manifest: Option<PathBuf>,
    /// Cluster files (db_id -> cluster) recorded on the databases.
    #[arg(long)]
    pub clusters: Vec<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Split questions into train, in-domain and cross-domain test sets.
    Splits(SplitsArgs),
    /// Question / whole-schema pairs.
    SchemaPairs(SchemaPairsArgs),
    /// Question / domain-statement pairs.
    StatementPairs(StatementPairsArgs),
    /// Question / table pairs.
    TablePairs(TablePairsArgs),
    /// Nested or cluster-matched database subsets.
    Subsets(SubsetsArgs),
}

#[derive(Args, Debug)]
pub struct SplitsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.16)]
    pub in_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PairInput {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file; pairs are built from its train partition.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Line-delimited JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SchemaPairsArgs {
    #[command(flatten)]
    pub input: PairInput,
    /// all, per-question:K or per-db-pair.
    #[arg(long, default_value = "all")]
    pub policy: String,
}

#[derive(Args, Debug)]
pub struct StatementPairsArgs {
    #[command(flatten)]
    pub input: PairInput,
    /// Same-database negatives per question.
    #[arg(long, default_value_t = 1)]
    pub hard: usize,
    /// Other-database negatives per question.
    #[arg(long, default_value_t = 1)]
    pub soft: usize,
}

#[derive(Args, Debug)]
pub struct TablePairsArgs {
    #[command(flatten)]
    pub input: PairInput,
    /// Negatives kept per question (default: all).
    #[arg(long)]
    pub negatives_per_question: Option<usize>,
    /// Irrelevant statements used as extra evidence contexts for negatives.
    #[arg(long, default_value_t = 1)]
    pub irrelevant_variants: usize,
}

#[derive(Args, Debug)]
pub struct SubsetsArgs {
    /// Restrict the pool to this corpus's databases.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Nested subset sizes, e.g. 20,40,80.
    #[arg(long, value_delimiter = ',', conflicts_with = "reference")]
    pub sizes: Vec<usize>,
    /// Cluster file for the pool (required for matched sampling).
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Cluster file whose histogram every set must match.
    #[arg(long, requires = "clusters")]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub n_sets: usize,
    /// Draw sets independently instead of without replacement.
    #[arg(long)]
    pub independent: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum IndexCommand {
    Build(Box<IndexBuildArgs>),
    Inspect(IndexInspectArgs),
}

#[derive(Args, Debug)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub adapters: AdapterArgs,
    /// Any of schema, tables, statements.
    #[arg(long, value_delimiter = ',', default_value = "schema,tables,statements")]
    pub granularities: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexInspectArgs {
    #[arg(long)]
    pub index: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    DistanceStandard,
    PaperLiteral,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 5e-6)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub margin: f64,
    #[arg(long, value_enum, default_value = "distance-standard")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct RouteArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub question: String,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Print the contributing tables after each score.
    #[arg(long)]
    pub explain: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum QuestionSet {
    /// Every corpus question, ranked over the whole index.
    All,
    Train,
    TestIn,
    TestOut,
    /// In-domain and cross-domain test questions over the whole index.
    Test,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Split file; required for every set except `all`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub set: QuestionSet,
    /// Cluster files for the vertical metrics.
    #[arg(long)]
    pub clusters: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output path stem; `.json` and `.csv` are written next to it.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExperimentCommon {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum ExperimentCommand {
    /// Nested repositories of decreasing size.
    SubsetScaling {
        #[command(flatten)]
        common: ExperimentCommon,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Repositories matching a reference cluster histogram, averaged.
    ClusterMatched {
        #[command(flatten)]
        common: ExperimentCommon,
        /// Cluster file whose histogram the sets match.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        n_sets: usize,
        #[arg(long)]
        independent: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pooled table scoring with and without statement retrieval.
    MetadataAblation {
        #[command(flatten)]
        common: ExperimentCommon,
    },
    /// In-domain against cross-domain test sets.
    InVsCross {
        #[command(flatten)]
        common: ExperimentCommon,
    },
}
