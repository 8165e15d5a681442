//! Positive/negative sentence-pair generators for the three training targets.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{extract_tables_from_sql, NegativeClass, PairExample, PairKind, RoutingDataset, RoutingSample, SynthError};
use crate::schema::{db_text, table_text, Corpus, DatabaseSchema, DomainStatement, TableSchema};

/// How question/schema negatives are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativePolicy {
    /// Every question against every other training database.
    All,
    /// Up to `k` other databases per question, sampled without replacement.
    PerQuestion(usize),
    /// One negative per ordered (gold database, other database) pair, using a
    /// randomly chosen question of the gold database.
    PerDbPair,
}

impl FromStr for NegativePolicy {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(NegativePolicy::All),
            "per-db-pair" => Ok(NegativePolicy::PerDbPair),
            _ => s
                .strip_prefix("per-question:")
                .and_then(|k| k.parse().ok())
                .map(NegativePolicy::PerQuestion)
                .ok_or_else(|| SynthError::Policy(s.to_string())),
        }
    }
}

/// Knobs for question/table pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TablePairPolicy {
    /// Negatives kept per question; `None` keeps the whole candidate set.
    pub negatives_per_question: Option<usize>,
    /// Irrelevant same-database statements used as alternative evidence
    /// contexts for irrelevant tables (in addition to the question's own evidence).
    pub irrelevant_evidence_variants: usize,
}

impl Default for TablePairPolicy {
    fn default() -> Self {
        TablePairPolicy {
            negatives_per_question: None,
            irrelevant_evidence_variants: 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct PairSet {
    pub pairs: Vec<PairExample>,
    /// Questions skipped for lack of evidence / usable SQL.
    pub skipped: usize,
    /// Tables named in gold SQL but absent from the schema.
    pub unmatched_tables: usize,
}

impl PairSet {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }
}

struct Raw {
    question_id: String,
    side_a: String,
    side_b: String,
    label: u8,
    class: Option<NegativeClass>,
}

fn raw(q: &RoutingSample, side_b: String, label: u8, class: Option<NegativeClass>) -> Raw {
    Raw {
        question_id: q.question_id.clone(),
        side_a: q.text.clone(),
        side_b,
        label,
        class,
    }
}

/// De-duplicates and orders by (question id, side_b digest), then numbers the pairs.
fn finalize(kind: PairKind, raws: Vec<Raw>) -> Vec<PairExample> {
    let mut seen = HashSet::new();
    let mut keyed: Vec<([u8; 32], Raw)> = raws
        .into_iter()
        .filter(|r| seen.insert((r.question_id.clone(), r.side_b.clone(), r.label)))
        .map(|r| (Sha256::digest(r.side_b.as_bytes()).into(), r))
        .collect();
    keyed.sort_by(|(ha, a), (hb, b)| {
        a.question_id
            .cmp(&b.question_id)
            .then(b.label.cmp(&a.label))
            .then(ha.cmp(hb))
    });
    let prefix = match kind {
        PairKind::Schema => "schema",
        PairKind::Table => "table",
        PairKind::Statement => "statement",
    };
    keyed
        .into_iter()
        .enumerate()
        .map(|(i, (_, r))| PairExample {
            id: format!("{prefix}-{i:06}"),
            question_id: r.question_id,
            side_a: r.side_a,
            side_b: r.side_b,
            label: r.label,
            kind,
            negative_class: r.class,
        })
        .collect()
}

/// Samples up to `k` distinct eligible items.
fn sample_eligible<'a, T>(
    pool: &'a [T],
    k: usize,
    eligible: impl Fn(&T) -> bool,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a T> {
    if k == 0 || pool.is_empty() {
        return Vec::new();
    }
    let mut chosen = Vec::new();
    let mut taken = BTreeSet::new();
    let mut attempts = 0;
    while chosen.len() < k && attempts < 20 * k {
        attempts += 1;
        let i = rng.random_range(0..pool.len());
        if !taken.contains(&i) && eligible(&pool[i]) {
            taken.insert(i);
            chosen.push(i);
        }
    }
    if chosen.len() < k {
        let mut all: Vec<usize> = (0..pool.len()).filter(|&i| eligible(&pool[i])).collect();
        all.shuffle(rng);
        all.truncate(k);
        chosen = all;
    }
    chosen.into_iter().map(|i| &pool[i]).collect()
}

fn train_databases<'c>(dataset: &RoutingDataset, corpus: &'c Corpus) -> Vec<&'c DatabaseSchema> {
    dataset
        .train_dbs
        .iter()
        .filter_map(|id| corpus.database(id))
        .collect()
}

/// Question/database-schema pairs over the training databases.
pub fn gen_schema_pairs(
    dataset: &RoutingDataset,
    corpus: &Corpus,
    policy: NegativePolicy,
    seed: u64,
) -> Vec<PairExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dbs = train_databases(dataset, corpus);
    let texts: BTreeMap<&str, String> = dbs.iter().map(|d| (d.db_id(), db_text(d))).collect();
    let mut out = Vec::new();
    for q in &dataset.train {
        if let Some(t) = texts.get(q.gold_db_id.as_str()) {
            out.push(raw(q, t.clone(), 1, None));
        }
    }
    match policy {
        NegativePolicy::All | NegativePolicy::PerQuestion(_) => {
            for q in &dataset.train {
                let others: Vec<&str> = texts.keys().copied().filter(|d| *d != q.gold_db_id).collect();
                let picked: Vec<&&str> = match policy {
                    NegativePolicy::PerQuestion(k) => sample_eligible(&others, k, |_| true, &mut rng),
                    _ => others.iter().collect(),
                };
                for d in picked {
                    out.push(raw(q, texts[*d].clone(), 0, None));
                }
            }
        }
        NegativePolicy::PerDbPair => {
            let mut by_db: BTreeMap<&str, Vec<&RoutingSample>> = BTreeMap::new();
            for q in &dataset.train {
                by_db.entry(q.gold_db_id.as_str()).or_default().push(q);
            }
            for (gold, qs) in &by_db {
                for (other, text) in &texts {
                    if other == gold {
                        continue;
                    }
                    let q = qs[rng.random_range(0..qs.len())];
                    out.push(raw(q, text.clone(), 0, None));
                }
            }
        }
    }
    finalize(PairKind::Schema, out)
}

/// Question/domain-statement pairs with hard (same database) and soft
/// (other database) negatives.
pub fn gen_statement_pairs(
    dataset: &RoutingDataset,
    corpus: &Corpus,
    hard_per_q: usize,
    soft_per_q: usize,
    seed: u64,
) -> PairSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dbs = train_databases(dataset, corpus);
    let pool: Vec<(&str, &DomainStatement)> = dbs
        .iter()
        .flat_map(|d| d.metadata().iter().map(move |s| (d.db_id(), s)))
        .collect();
    let mut out = Vec::new();
    let mut skipped = 0;
    for q in &dataset.train {
        let evidence = corpus.evidence(q);
        let Some(gold) = corpus.database(&q.gold_db_id).filter(|_| !evidence.is_empty()) else {
            skipped += 1;
            continue;
        };
        let ev_texts: HashSet<&str> = evidence.iter().map(|s| s.text.as_str()).collect();
        for s in &evidence {
            out.push(raw(q, s.text.clone(), 1, None));
        }
        let hard = sample_eligible(
            gold.metadata(),
            hard_per_q,
            |s| !q.evidence_ids.contains(&s.id) && !ev_texts.contains(s.text.as_str()),
            &mut rng,
        );
        for s in hard {
            out.push(raw(q, s.text.clone(), 0, Some(NegativeClass::Hard)));
        }
        let soft = sample_eligible(
            &pool,
            soft_per_q,
            |(db, s)| *db != gold.db_id() && !ev_texts.contains(s.text.as_str()),
            &mut rng,
        );
        for (_, s) in soft {
            out.push(raw(q, s.text.clone(), 0, Some(NegativeClass::Soft)));
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} training questions without evidence skipped");
    }
    PairSet {
        pairs: finalize(PairKind::Statement, out),
        skipped,
        unmatched_tables: 0,
    }
}

/// Question/table pairs. The table side carries the question's evidence
/// statements in front of the table DDL, the same composition used at query
/// time for metadata-aware table scoring.
///
/// Positives: every table named in the gold SQL. Negatives: the remaining
/// tables of the gold database, each combined with the question's own
/// evidence and with sampled irrelevant statements of the same database.
pub fn gen_table_pairs(
    dataset: &RoutingDataset,
    corpus: &Corpus,
    policy: TablePairPolicy,
    seed: u64,
) -> Result<PairSet, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut skipped = 0;
    let mut unmatched_tables = 0;
    for q in &dataset.train {
        let (Some(sql), Some(db)) = (q.sql.as_deref(), corpus.database(&q.gold_db_id)) else {
            skipped += 1;
            continue;
        };
        let names = extract_tables_from_sql(sql).map_err(|message| SynthError::Sql {
            question_id: q.question_id.clone(),
            message,
        })?;
        let mut relevant: Vec<&TableSchema> = Vec::new();
        for n in &names {
            match db.table_ignore_case(n) {
                Some(t) if !relevant.iter().any(|r| r.name() == t.name()) => relevant.push(t),
                Some(_) => {}
                None => unmatched_tables += 1,
            }
        }
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        let evidence = corpus.evidence(q);
        let ev_texts: Vec<&str> = evidence.iter().map(|s| s.text.as_str()).collect();
        let positives: BTreeSet<String> = relevant.iter().map(|t| table_text(t, &ev_texts)).collect();
        for p in &positives {
            out.push(raw(q, p.clone(), 1, None));
        }

        let mut variants: Vec<Vec<&str>> = vec![ev_texts.clone()];
        let irrelevant_statements = sample_eligible(
            db.metadata(),
            policy.irrelevant_evidence_variants,
            |s| !q.evidence_ids.contains(&s.id) && !ev_texts.contains(&s.text.as_str()),
            &mut rng,
        );
        variants.extend(irrelevant_statements.into_iter().map(|s| vec![s.text.as_str()]));

        let mut candidates: Vec<String> = Vec::new();
        for t in db.tables() {
            if relevant.iter().any(|r| r.name() == t.name()) {
                continue;
            }
            for v in &variants {
                let text = table_text(t, v);
                if !positives.contains(&text) && !candidates.contains(&text) {
                    candidates.push(text);
                }
            }
        }
        if let Some(k) = policy.negatives_per_question {
            candidates.shuffle(&mut rng);
            candidates.truncate(k);
        }
        for c in candidates {
            out.push(raw(q, c, 0, None));
        }
    }
    Ok(PairSet {
        pairs: finalize(PairKind::Table, out),
        skipped,
        unmatched_tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnDef, DataType};
    use crate::synth::make_splits;

    fn table(name: &str) -> TableSchema {
        TableSchema::new(name, vec![ColumnDef::new(format!("{name} id"), DataType::Integer)]).unwrap()
    }

    fn q(id: &str, text: &str, db: &str) -> RoutingSample {
        RoutingSample {
            question_id: id.into(),
            text: text.into(),
            gold_db_id: db.into(),
            evidence_ids: vec![],
            sql: None,
            held_out: false,
        }
    }

    fn dataset_of(corpus: &Corpus) -> RoutingDataset {
        RoutingDataset {
            train: corpus.samples().to_vec(),
            test_in: vec![],
            test_out: vec![],
            train_dbs: corpus.db_ids(),
            in_dbs: corpus.db_ids(),
            out_dbs: Default::default(),
            report: Default::default(),
        }
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("all".parse::<NegativePolicy>().unwrap(), NegativePolicy::All);
        assert_eq!("per-question:3".parse::<NegativePolicy>().unwrap(), NegativePolicy::PerQuestion(3));
        assert_eq!("per-db-pair".parse::<NegativePolicy>().unwrap(), NegativePolicy::PerDbPair);
        assert!("some".parse::<NegativePolicy>().is_err());
    }

    #[test]
    fn schema_pairs_two_dbs_all() {
        let c = Corpus::new(
            vec![
                DatabaseSchema::new("a", vec![table("x")]).unwrap(),
                DatabaseSchema::new("b", vec![table("y")]).unwrap(),
            ],
            vec![q("q1", "what?", "a")],
        )
        .unwrap();
        let pairs = gen_schema_pairs(&dataset_of(&c), &c, NegativePolicy::All, 0);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].label, 1);
        assert!(pairs[0].side_b.starts_with("a\n"));
        assert!(pairs[1].side_b.starts_with("b\n"));
    }

    #[test]
    fn schema_pair_policies_count() {
        let dbs: Vec<_> = (0..5)
            .map(|i| DatabaseSchema::new(format!("d{i}"), vec![table("t")]).unwrap())
            .collect();
        let samples: Vec<_> = (0..5)
            .flat_map(|i| (0..3).map(move |j| q(&format!("q{i}{j}"), &format!("question {i} {j}"), &format!("d{i}"))))
            .collect();
        let c = Corpus::new(dbs, samples).unwrap();
        let ds = dataset_of(&c);
        let count = |p: NegativePolicy| {
            let pairs = gen_schema_pairs(&ds, &c, p, 3);
            (pairs.iter().filter(|p| p.label == 1).count(), pairs.iter().filter(|p| p.label == 0).count())
        };
        assert_eq!(count(NegativePolicy::All), (15, 15 * 4));
        assert_eq!(count(NegativePolicy::PerQuestion(2)), (15, 30));
        // One per ordered database pair: 5 × 4.
        assert_eq!(count(NegativePolicy::PerDbPair), (15, 20));
        assert_eq!(gen_schema_pairs(&ds, &c, NegativePolicy::PerDbPair, 9), gen_schema_pairs(&ds, &c, NegativePolicy::PerDbPair, 9));
    }

    fn statement_corpus() -> Corpus {
        let meta = |db: &str| -> Vec<DomainStatement> {
            (1..=3).map(|i| DomainStatement::new(format!("{db}{i}"), format!("{db} fact {i}"))).collect()
        };
        let mut s = q("q1", "which fact?", "a");
        s.evidence_ids = vec!["a1".into()];
        Corpus::new(
            vec![
                DatabaseSchema::with_metadata("a", vec![table("x")], meta("a"), None).unwrap(),
                DatabaseSchema::with_metadata("b", vec![table("y")], meta("b"), None).unwrap(),
            ],
            vec![s, q("q2", "no evidence", "a")],
        )
        .unwrap()
    }

    #[test]
    fn statement_pairs_enumerated_candidates() {
        let c = statement_corpus();
        let ds = dataset_of(&c);
        let hard_candidates: BTreeSet<&str> = ["a fact 2", "a fact 3"].into();
        let soft_candidates: BTreeSet<&str> = ["b fact 1", "b fact 2", "b fact 3"].into();
        for seed in 0..16 {
            let set = gen_statement_pairs(&ds, &c, 1, 1, seed);
            assert_eq!(set.skipped, 1);
            assert_eq!(set.positives(), 1);
            let hard: Vec<_> = set.pairs.iter().filter(|p| p.negative_class == Some(NegativeClass::Hard)).collect();
            let soft: Vec<_> = set.pairs.iter().filter(|p| p.negative_class == Some(NegativeClass::Soft)).collect();
            assert_eq!((hard.len(), soft.len()), (1, 1));
            assert!(hard_candidates.contains(hard[0].side_b.as_str()));
            assert!(soft_candidates.contains(soft[0].side_b.as_str()));
        }
    }

    #[test]
    fn statement_pairs_exhaustion() {
        let meta = vec![DomainStatement::new("s1", "one"), DomainStatement::new("s2", "two")];
        let mut s = q("q1", "both?", "a");
        s.evidence_ids = vec!["s1".into(), "s2".into()];
        let c = Corpus::new(vec![DatabaseSchema::with_metadata("a", vec![table("x")], meta, None).unwrap()], vec![s]).unwrap();
        let set = gen_statement_pairs(&dataset_of(&c), &c, 5, 5, 0);
        assert_eq!(set.positives(), 2);
        assert_eq!(set.negatives(), 0);
    }

    #[test]
    fn table_pairs_enumerated() {
        let meta = vec![DomainStatement::new("e1", "rel"), DomainStatement::new("e2", "other")];
        let db = DatabaseSchema::with_metadata("a", vec![table("t1"), table("t2"), table("t3")], meta, None).unwrap();
        let mut s = q("q1", "join?", "a");
        s.sql = Some("SELECT * FROM T1 JOIN t2 ON t1.x = t2.x".into());
        s.evidence_ids = vec!["e1".into()];
        let c = Corpus::new(vec![db.clone()], vec![s]).unwrap();
        let set = gen_table_pairs(&dataset_of(&c), &c, TablePairPolicy::default(), 0).unwrap();
        assert_eq!(set.positives(), 2);
        // {t3} × {own evidence, the one irrelevant statement}.
        let t3 = db.table("t3").unwrap();
        let expected: BTreeSet<String> = [table_text(t3, &["rel"]), table_text(t3, &["other"])].into();
        let got: BTreeSet<String> = set.pairs.iter().filter(|p| p.label == 0).map(|p| p.side_b.clone()).collect();
        assert_eq!(got, expected);
        for p in set.pairs.iter().filter(|p| p.label == 1) {
            assert!(p.side_b.starts_with("rel\nCREATE TABLE t"));
        }
    }

    #[test]
    fn table_pairs_single_table_db() {
        let db = DatabaseSchema::new("a", vec![table("only")]).unwrap();
        let mut s = q("q1", "x?", "a");
        s.sql = Some("SELECT count(*) FROM only".into());
        let c = Corpus::new(vec![db], vec![s]).unwrap();
        let set = gen_table_pairs(&dataset_of(&c), &c, TablePairPolicy::default(), 0).unwrap();
        assert_eq!((set.positives(), set.negatives()), (1, 0));
    }

    #[test]
    fn table_pairs_report_bad_sql() {
        let db = DatabaseSchema::new("a", vec![table("only")]).unwrap();
        let mut s = q("q7", "x?", "a");
        s.sql = Some("SELECT (".into());
        let c = Corpus::new(vec![db], vec![s]).unwrap();
        match gen_table_pairs(&dataset_of(&c), &c, TablePairPolicy::default(), 0) {
            Err(SynthError::Sql { question_id, .. }) => assert_eq!(question_id, "q7"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negatives_never_equal_positive_side() {
        let c = statement_corpus();
        let ds = make_splits(&Corpus::new(c.databases().to_vec(), {
            let mut v = c.samples().to_vec();
            v.push(q("q3", "third", "a"));
            v.push(q("q4", "fourth", "b"));
            v.push(q("q5", "fifth", "b"));
            v
        }).unwrap(), 0.3, 1)
        .unwrap();
        let pairs = gen_schema_pairs(&ds, &c, NegativePolicy::All, 0);
        let pos: BTreeMap<&str, &str> = pairs.iter().filter(|p| p.label == 1).map(|p| (p.question_id.as_str(), p.side_b.as_str())).collect();
        for p in pairs.iter().filter(|p| p.label == 0) {
            assert_ne!(pos[p.question_id.as_str()], p.side_b);
        }
    }
}
