use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RoutingSample, SynthError};
use crate::schema::Corpus;

/// Key used to detect the same question posed on several databases.
pub fn normalize_question(text: &str) -> String {
    text.trim().to_lowercase()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    /// Questions kept in train because their text repeats in the corpus.
    pub forced_to_train: usize,
    /// Train-side databases that ended up without an in-domain test question.
    pub uncovered_dbs: Vec<String>,
    /// Held-out questions whose text also occurs in train (they differ in database).
    pub heldout_text_overlap: usize,
}

/// Train, in-domain and cross-domain question sets over their database sets.
#[derive(Clone, Debug)]
pub struct RoutingDataset {
    pub train: Vec<RoutingSample>,
    pub test_in: Vec<RoutingSample>,
    pub test_out: Vec<RoutingSample>,
    pub train_dbs: BTreeSet<String>,
    /// Repository for in-domain evaluation; identical to `train_dbs`.
    pub in_dbs: BTreeSet<String>,
    pub out_dbs: BTreeSet<String>,
    pub report: SplitReport,
}

/// Serialized split: question ids per partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub test_in: Vec<String>,
    pub test_out: Vec<String>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Draws the in-domain test set per database and keeps the held-out partition intact.
///
/// From every train-side database with `n ≥ 2` questions, `round(n·in_fraction)`
/// questions (at least one, at most `n − 1`) move to `test_in`. Questions whose
/// normalized text occurs more than once on the train side never move.
pub fn make_splits(corpus: &Corpus, in_fraction: f64, seed: u64) -> Result<RoutingDataset, SynthError> {
    if !(in_fraction > 0.0 && in_fraction < 1.0) {
        return Err(SynthError::FractionOutOfRange(in_fraction));
    }
    let (train_side, held): (Vec<&RoutingSample>, Vec<&RoutingSample>) =
        corpus.samples().iter().partition(|s| !s.held_out);

    let mut text_count: HashMap<String, usize> = HashMap::new();
    for s in &train_side {
        *text_count.entry(normalize_question(&s.text)).or_default() += 1;
    }
    let repeated = |s: &RoutingSample| text_count[&normalize_question(&s.text)] > 1;

    let mut by_db: BTreeMap<&str, Vec<&RoutingSample>> = BTreeMap::new();
    for s in &train_side {
        by_db.entry(s.gold_db_id.as_str()).or_default().push(s);
    }
    if !by_db.is_empty() && by_db.values().all(|qs| qs.len() < 2) {
        return Err(SynthError::SingleQuestionPerDb);
    }
    let held_dbs: BTreeSet<String> = held.iter().map(|s| s.gold_db_id.clone()).collect();
    if let Some(db) = by_db.keys().find(|db| held_dbs.contains(**db)) {
        return Err(SynthError::OverlappingPartitions(db.to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: BTreeSet<&str> = BTreeSet::new();
    let mut report = SplitReport::default();
    for (db, qs) in &by_db {
        let n = qs.len();
        if n < 2 {
            report.uncovered_dbs.push(db.to_string());
            continue;
        }
        let target = round_half_up(n as f64 * in_fraction).clamp(1, n - 1);
        let mut candidates: Vec<&RoutingSample> = qs.iter().copied().filter(|s| !repeated(s)).collect();
        candidates.shuffle(&mut rng);
        let take = target.min(candidates.len());
        if take == 0 {
            report.uncovered_dbs.push(db.to_string());
        }
        chosen.extend(candidates[..take].iter().map(|s| s.question_id.as_str()));
    }

    let mut train = Vec::new();
    let mut test_in = Vec::new();
    for s in &train_side {
        if chosen.contains(s.question_id.as_str()) {
            test_in.push((*s).clone());
        } else {
            if repeated(s) {
                report.forced_to_train += 1;
            }
            train.push((*s).clone());
        }
    }
    let test_out: Vec<RoutingSample> = held.into_iter().cloned().collect();
    let train_dbs: BTreeSet<String> = by_db.keys().map(|s| s.to_string()).collect();
    let train_texts: BTreeSet<String> = train.iter().map(|s| normalize_question(&s.text)).collect();
    report.heldout_text_overlap = test_out
        .iter()
        .filter(|s| train_texts.contains(&normalize_question(&s.text)))
        .count();

    let dataset = RoutingDataset {
        train,
        test_in,
        test_out,
        in_dbs: train_dbs.clone(),
        train_dbs,
        out_dbs: held_dbs,
        report,
    };
    dataset.check_invariants()?;
    Ok(dataset)
}

impl RoutingDataset {
    /// Verifies the partition conditions by set algebra on ids and texts.
    pub fn check_invariants(&self) -> Result<(), SynthError> {
        let ids = |v: &[RoutingSample]| v.iter().map(|s| s.question_id.clone()).collect::<BTreeSet<_>>();
        let texts = |v: &[RoutingSample]| v.iter().map(|s| normalize_question(&s.text)).collect::<BTreeSet<_>>();
        let fail = |m: String| Err(SynthError::Invariant(m));

        let (tr_ids, in_ids, out_ids) = (ids(&self.train), ids(&self.test_in), ids(&self.test_out));
        if let Some(q) = tr_ids.intersection(&in_ids).next() {
            return fail(format!("question `{q}` in both train and test_in"));
        }
        if let Some(t) = texts(&self.train).intersection(&texts(&self.test_in)).next() {
            return fail(format!("question text `{t}` in both train and test_in"));
        }
        if let Some(q) = tr_ids.intersection(&out_ids).next() {
            return fail(format!("question `{q}` in both train and test_out"));
        }
        if self.in_dbs != self.train_dbs {
            return fail("in-domain databases differ from training databases".into());
        }
        if let Some(d) = self.out_dbs.intersection(&self.train_dbs).next() {
            return fail(format!("database `{d}` in both train and test_out"));
        }
        for (name, set, dbs) in [
            ("train", &self.train, &self.train_dbs),
            ("test_in", &self.test_in, &self.in_dbs),
            ("test_out", &self.test_out, &self.out_dbs),
        ] {
            if let Some(s) = set.iter().find(|s| !dbs.contains(&s.gold_db_id)) {
                return fail(format!("{name} question `{}` maps outside its database set", s.question_id));
            }
        }
        let mut per_db: BTreeMap<&str, usize> = BTreeMap::new();
        for s in self.train.iter().chain(&self.test_in) {
            *per_db.entry(&s.gold_db_id).or_default() += 1;
        }
        let covered: BTreeSet<&str> = self.test_in.iter().map(|s| s.gold_db_id.as_str()).collect();
        for (db, n) in per_db {
            if n >= 2 && !covered.contains(db) && !self.report.uncovered_dbs.iter().any(|u| u == db) {
                return fail(format!("in-domain database `{db}` has no test_in question"));
            }
        }
        Ok(())
    }

    pub fn to_split_file(&self) -> SplitFile {
        let ids = |v: &[RoutingSample]| v.iter().map(|s| s.question_id.clone()).collect();
        SplitFile {
            train: ids(&self.train),
            test_in: ids(&self.test_in),
            test_out: ids(&self.test_out),
        }
    }

    /// Rebuilds a dataset from a split file against its corpus.
    pub fn from_split_file(corpus: &Corpus, file: &SplitFile) -> Result<Self, SynthError> {
        let get = |ids: &[String]| {
            ids.iter()
                .map(|id| corpus.sample(id).cloned().ok_or_else(|| SynthError::UnknownQuestion(id.clone())))
                .collect::<Result<Vec<_>, _>>()
        };
        let train = get(&file.train)?;
        let test_in = get(&file.test_in)?;
        let test_out = get(&file.test_out)?;
        let dbs = |v: &[RoutingSample]| v.iter().map(|s| s.gold_db_id.clone()).collect::<BTreeSet<_>>();
        let train_dbs = dbs(&train);
        let out_dbs = dbs(&test_out);
        let mut per_db: BTreeMap<&str, usize> = BTreeMap::new();
        for s in train.iter().chain(&test_in) {
            *per_db.entry(&s.gold_db_id).or_default() += 1;
        }
        let covered = dbs(&test_in);
        let uncovered_dbs = train_dbs.iter().filter(|d| !covered.contains(*d)).cloned().collect();
        let ds = RoutingDataset {
            in_dbs: train_dbs.clone(),
            train_dbs,
            out_dbs,
            train,
            test_in,
            test_out,
            report: SplitReport {
                uncovered_dbs,
                ..SplitReport::default()
            },
        };
        ds.check_invariants()?;
        Ok(ds)
    }

    /// Dataset that evaluates every sample of the corpus as a single test set.
    pub fn all_as_test(corpus: &Corpus) -> Self {
        let out_dbs = corpus.db_ids();
        RoutingDataset {
            train: Vec::new(),
            test_in: Vec::new(),
            test_out: corpus.samples().to_vec(),
            train_dbs: BTreeSet::new(),
            in_dbs: BTreeSet::new(),
            out_dbs,
            report: SplitReport::default(),
        }
    }
}
