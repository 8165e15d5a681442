use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use dbrouter_core::adapter::{train_adapter, LossMode, TrainConfig};
use dbrouter_core::eval::{cluster_matched, compare_sources, evaluate, in_vs_cross, subset_scaling, VerticalClusters};
use dbrouter_core::retrieval::{build_index, Granularities, Strategy};
use dbrouter_core::schema::Corpus;
use dbrouter_core::synth::{
    cluster_histogram, gen_schema_pairs, gen_statement_pairs, gen_table_pairs, make_splits, read_pairs,
    sample_cluster_matched, sample_db_subsets, write_pairs, NegativePolicy, RoutingDataset, RoutingSample, SplitFile,
    TablePairPolicy,
};
use dbrouter_core::Index;

use crate::cli::*;
use crate::engine::{load_corpus, Engine};
use crate::UsageError;

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_clusters(paths: &[impl AsRef<Path>]) -> Result<Option<VerticalClusters>> {
    let mut merged: Option<VerticalClusters> = None;
    for p in paths {
        let c = VerticalClusters::load(p)?;
        merged = Some(match merged {
            Some(m) => m.merged(&c),
            None => c,
        });
    }
    Ok(merged)
}

fn load_dataset(corpus: &Corpus, split: Option<&Path>) -> Result<Option<RoutingDataset>> {
    split
        .map(|p| {
            let file: SplitFile = read_json(p)?;
            Ok(RoutingDataset::from_split_file(corpus, &file)?)
        })
        .transpose()
}

/// Questions, the repository scope they are ranked over, and the split they came from.
type Selection = (Vec<RoutingSample>, Option<BTreeSet<String>>, Option<RoutingDataset>);

fn question_set(corpus: &Corpus, data: &DataArgs) -> Result<Selection> {
    let ds = load_dataset(corpus, data.split.as_deref())?;
    if data.set == QuestionSet::All {
        return Ok((corpus.samples().to_vec(), None, ds));
    }
    let d = ds
        .as_ref()
        .ok_or_else(|| UsageError(format!("--set {:?} needs --split", data.set).to_lowercase()))?;
    let (qs, scope) = match data.set {
        QuestionSet::Train => (d.train.clone(), Some(d.train_dbs.clone())),
        QuestionSet::TestIn => (d.test_in.clone(), Some(d.in_dbs.clone())),
        QuestionSet::TestOut => (d.test_out.clone(), Some(d.out_dbs.clone())),
        QuestionSet::Test => (d.test_in.iter().chain(&d.test_out).cloned().collect(), None),
        QuestionSet::All => unreachable!(),
    };
    Ok((qs, scope, ds))
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let mut corpus = if let Some(d) = &a.from_spider {
        Corpus::from_spider(d)?
    } else if let Some(d) = &a.from_bird {
        Corpus::from_bird(d)?
    } else {
        load_corpus(a.from_manifest.as_deref())?
    };
    if let Some(c) = load_clusters(&a.clusters)? {
        corpus.apply_clusters(&c.0);
    }
    corpus.save(&a.manifest)?;
    println!("{} databases, {} questions", corpus.databases().len(), corpus.samples().len());
    Ok(())
}

pub fn synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Splits(a) => {
            let corpus = load_corpus(Some(&a.manifest))?;
            let ds = make_splits(&corpus, a.in_fraction, a.seed)?;
            write_json(&a.out, &ds.to_split_file())?;
            println!(
                "train {} ({} dbs)\ttest_in {} ({} dbs)\ttest_out {} ({} dbs)",
                ds.train.len(),
                ds.train_dbs.len(),
                ds.test_in.len(),
                ds.in_dbs.len(),
                ds.test_out.len(),
                ds.out_dbs.len()
            );
            if ds.report.forced_to_train > 0 || !ds.report.uncovered_dbs.is_empty() {
                eprintln!(
                    "{} repeated questions kept in train; {} databases without in-domain test questions",
                    ds.report.forced_to_train,
                    ds.report.uncovered_dbs.len()
                );
            }
        }
        SynthCommand::SchemaPairs(a) => {
            let policy: NegativePolicy = a.policy.parse()?;
            let (corpus, ds) = pair_input(&a.input)?;
            let pairs = gen_schema_pairs(&ds, &corpus, policy, a.input.seed);
            write_pairs(&a.input.out, &pairs)?;
            let pos = pairs.iter().filter(|p| p.is_positive()).count();
            println!("{} pairs ({} positive, {} negative)", pairs.len(), pos, pairs.len() - pos);
        }
        SynthCommand::StatementPairs(a) => {
            let (corpus, ds) = pair_input(&a.input)?;
            let set = gen_statement_pairs(&ds, &corpus, a.hard, a.soft, a.input.seed);
            write_pairs(&a.input.out, &set.pairs)?;
            println!(
                "{} pairs ({} positive, {} negative); {} questions without evidence skipped",
                set.pairs.len(),
                set.positives(),
                set.negatives(),
                set.skipped
            );
        }
        SynthCommand::TablePairs(a) => {
            let (corpus, ds) = pair_input(&a.input)?;
            let policy = TablePairPolicy {
                negatives_per_question: a.negatives_per_question,
                irrelevant_evidence_variants: a.irrelevant_variants,
            };
            let set = gen_table_pairs(&ds, &corpus, policy, a.input.seed)?;
            write_pairs(&a.input.out, &set.pairs)?;
            println!(
                "{} pairs ({} positive, {} negative); {} questions skipped, {} unmatched tables",
                set.pairs.len(),
                set.positives(),
                set.negatives(),
                set.skipped,
                set.unmatched_tables
            );
        }
        SynthCommand::Subsets(a) => subsets(a)?,
    }
    Ok(())
}

fn pair_input(a: &PairInput) -> Result<(Corpus, RoutingDataset)> {
    let corpus = load_corpus(Some(&a.manifest))?;
    let ds = load_dataset(&corpus, Some(&a.split))?.expect("split given");
    Ok((corpus, ds))
}

#[derive(Serialize)]
struct SubsetFile {
    seed: u64,
    sets: Vec<BTreeSet<String>>,
}

fn subsets(a: SubsetsArgs) -> Result<()> {
    let clusters = load_clusters(a.clusters.as_slice())?;
    let mut pool: BTreeSet<String> = match (&a.manifest, &clusters) {
        (Some(m), _) => load_corpus(Some(m))?.db_ids(),
        (None, Some(c)) => c.0.keys().cloned().collect(),
        (None, None) => return Err(UsageError("subsets need --manifest or --clusters".into()).into()),
    };
    if let (Some(_), Some(c)) = (&a.manifest, &clusters) {
        if a.reference.is_some() {
            pool.retain(|d| c.0.contains_key(d));
        }
    }
    let sets = match &a.reference {
        Some(r) => {
            let reference = VerticalClusters::load(r)?;
            let refdbs: BTreeSet<String> = reference.0.keys().cloned().collect();
            let hist = cluster_histogram(&refdbs, &reference.0);
            let c = clusters.expect("clap requires --clusters with --reference");
            sample_cluster_matched(&pool, &c.0, &hist, a.n_sets, !a.independent, a.seed)?
        }
        None => {
            if a.sizes.is_empty() {
                return Err(UsageError("give --sizes or --reference".into()).into());
            }
            sample_db_subsets(&pool, &a.sizes, a.seed)?
        }
    };
    write_json(&a.out, &SubsetFile { seed: a.seed, sets: sets.clone() })?;
    for (i, s) in sets.iter().enumerate() {
        println!("set {}\t{} databases", i + 1, s.len());
    }
    Ok(())
}

fn granularities(names: &[String]) -> Result<Granularities> {
    let mut g = Granularities {
        schema: false,
        tables: false,
        statements: false,
    };
    for n in names {
        match n.trim() {
            "schema" => g.schema = true,
            "tables" => g.tables = true,
            "statements" => g.statements = true,
            other => return Err(UsageError(format!("unknown granularity `{other}`")).into()),
        }
    }
    Ok(g)
}

pub fn index(cmd: IndexCommand) -> Result<()> {
    match cmd {
        IndexCommand::Build(a) => {
            let corpus = load_corpus(Some(&a.manifest))?;
            let embedder = a.embed.embedder()?;
            let adapters = a.adapters.load()?;
            let idx = build_index(&corpus, &embedder, &adapters, granularities(&a.granularities)?)?;
            idx.save(&a.out)?;
            embedder.cache().flush()?;
            let (d, t, s) = idx.counts();
            println!("{d} databases, {t} tables, {s} statements, dim {}", idx.dim());
        }
        IndexCommand::Inspect(a) => {
            let idx = Index::load(&a.index)?;
            let (d, t, s) = idx.counts();
            println!("{}", serde_json::to_string_pretty(idx.header())?);
            println!("{d} databases, {t} tables, {s} statements");
        }
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let pairs = read_pairs(&a.pairs)?;
    let embedder = a.embed.embedder()?;
    let cfg = TrainConfig {
        batch_size: a.batch,
        learning_rate: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        margin: a.margin,
        loss_mode: match a.mode {
            ModeArg::DistanceStandard => LossMode::DistanceStandard,
            ModeArg::PaperLiteral => LossMode::PaperLiteral,
        },
        ..TrainConfig::default()
    };
    let (adapter, log) = train_adapter(&pairs, &embedder, &cfg)?;
    adapter.save(&a.out)?;
    embedder.cache().flush()?;
    for (i, l) in log.epoch_losses.iter().enumerate() {
        println!("epoch {}\tloss {l:.6}", i + 1);
    }
    if let Some(e) = log.selected_epoch {
        println!("kept epoch {}", e + 1);
    }
    Ok(())
}

pub fn route(a: RouteArgs) -> Result<()> {
    if a.k == 0 {
        return Err(UsageError("--k must be at least 1".into()).into());
    }
    let engine = Engine::load(&a.engine)?;
    let ranked = engine.rank("cli", &a.question, None, engine.strategy)?;
    for (i, e) in ranked.top(a.k).iter().enumerate() {
        if a.explain && !e.top_tables.is_empty() {
            println!("{}\t{}\t{:.6}\t{}", i + 1, e.db_id, e.score, e.top_tables.join(","));
        } else {
            println!("{}\t{}\t{:.6}", i + 1, e.db_id, e.score);
        }
    }
    engine.finish()?;
    Ok(())
}

fn write_incidents(engine: &Engine, stem: &Path) -> Result<()> {
    if engine.reranker.is_some() {
        write_json(&stem.with_extension("incidents.json"), &engine.incidents())?;
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let engine = Engine::load(&a.engine)?;
    let (samples, scope, _) = question_set(&engine.corpus, &a.data)?;
    let clusters = load_clusters(&a.data.clusters)?;
    let source = engine.source(engine.strategy)?;
    let report = evaluate(&source, &samples, scope.as_ref(), clusters.as_ref(), a.data.threads)?;
    report.write(&a.report, engine.strategy.as_str())?;
    write_incidents(&engine, &a.report)?;
    engine.finish()?;
    print!("{}", report.summary_csv(engine.strategy.as_str()));
    Ok(())
}

pub fn experiment(cmd: ExperimentCommand) -> Result<()> {
    let (common, report) = match cmd {
        ExperimentCommand::SubsetScaling { common, sizes, seed } => {
            let engine = Engine::load(&common.engine)?;
            let (samples, scope, _) = question_set(&engine.corpus, &common.data)?;
            let pool = scope.unwrap_or_else(|| engine.router.index().db_ids().map(str::to_string).collect());
            let clusters = load_clusters(&common.data.clusters)?;
            let source = engine.source(engine.strategy)?;
            let r = subset_scaling(&source, &samples, &pool, &sizes, seed, clusters.as_ref(), common.data.threads)?;
            engine.finish()?;
            (common, r)
        }
        ExperimentCommand::ClusterMatched {
            common,
            reference,
            n_sets,
            independent,
            seed,
        } => {
            let engine = Engine::load(&common.engine)?;
            let (samples, scope, _) = question_set(&engine.corpus, &common.data)?;
            let clusters = load_clusters(&common.data.clusters)?
                .ok_or_else(|| UsageError("cluster-matched sampling needs --clusters".into()))?;
            let pool: BTreeSet<String> = scope
                .unwrap_or_else(|| engine.router.index().db_ids().map(str::to_string).collect())
                .into_iter()
                .filter(|d| clusters.0.contains_key(d))
                .collect();
            let reference = VerticalClusters::load(&reference)?;
            let refdbs: BTreeSet<String> = reference.0.keys().cloned().collect();
            let hist = cluster_histogram(&refdbs, &reference.0);
            let source = engine.source(engine.strategy)?;
            let r = cluster_matched(
                &source,
                &samples,
                &pool,
                &clusters,
                &hist,
                n_sets,
                !independent,
                seed,
                common.data.threads,
            )?;
            engine.finish()?;
            (common, r)
        }
        ExperimentCommand::MetadataAblation { common } => {
            let engine = Engine::load(&common.engine)?;
            let (samples, scope, _) = question_set(&engine.corpus, &common.data)?;
            let clusters = load_clusters(&common.data.clusters)?;
            let with = engine.source(Strategy::PooledTablesMetadata)?;
            let without = engine.source(Strategy::PooledTables)?;
            let r = compare_sources(
                "metadata ablation",
                &[("with", &with), ("without", &without)],
                &samples,
                scope.as_ref(),
                clusters.as_ref(),
                common.data.threads,
            )?;
            engine.finish()?;
            (common, r)
        }
        ExperimentCommand::InVsCross { common } => {
            let engine = Engine::load(&common.engine)?;
            let ds = load_dataset(&engine.corpus, common.data.split.as_deref())?
                .ok_or_else(|| UsageError("in-vs-cross needs --split".into()))?;
            let clusters = load_clusters(&common.data.clusters)?;
            let source = engine.source(engine.strategy)?;
            let r = in_vs_cross(&source, &ds, clusters.as_ref(), common.data.threads)?;
            engine.finish()?;
            (common, r)
        }
    };
    report.write(&common.report)?;
    print!("{}", report.table.to_csv());
    for n in &report.table.notes {
        eprintln!("{n}");
    }
    Ok(())
}
