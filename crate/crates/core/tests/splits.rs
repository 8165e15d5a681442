use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use dbrouter_core::schema::Corpus;
use dbrouter_core::synth::{make_splits, normalize_question, RoutingSample};

/// Corpus with 2..8 in-domain and 1..4 held-out databases; some question
/// texts are shared by several in-domain databases.
fn random_corpus(rng: &mut ChaCha8Rng) -> Corpus {
    let n_in = rng.random_range(2..8);
    let n_out = rng.random_range(1..4);
    let mut dbs = Vec::new();
    let mut samples = Vec::new();
    let shared: Vec<String> = (0..3).map(|i| format!("Shared question number {i}?")).collect();
    let mut qid = 0;
    for d in 0..n_in + n_out {
        let id = format!("db{d}");
        dbs.push(common::database(rng, &id, 3));
        let held_out = d >= n_in;
        for _ in 0..rng.random_range(1..9) {
            let text = if !held_out && rng.random_bool(0.15) {
                shared[rng.random_range(0..shared.len())].clone()
            } else {
                format!("Question {qid} about {id}?")
            };
            samples.push(RoutingSample {
                question_id: format!("q{qid}"),
                text,
                gold_db_id: id.clone(),
                evidence_ids: vec![],
                sql: None,
                held_out,
            });
            qid += 1;
        }
    }
    // At least one database with two questions, so a split exists.
    for i in 0..2 {
        samples.push(RoutingSample {
            question_id: format!("extra{i}"),
            text: format!("Extra question {i}?"),
            gold_db_id: "db0".into(),
            evidence_ids: vec![],
            sql: None,
            held_out: false,
        });
    }
    Corpus::new(dbs, samples).unwrap()
}

#[test]
fn split_invariants_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100u64 {
        let corpus = random_corpus(&mut rng);
        let frac = [0.16, 0.3, 0.5][case as usize % 3];
        let ds = make_splits(&corpus, frac, case).unwrap();

        let ids = |v: &[RoutingSample]| v.iter().map(|s| s.question_id.clone()).collect::<BTreeSet<_>>();
        let dbs = |v: &[RoutingSample]| v.iter().map(|s| s.gold_db_id.clone()).collect::<BTreeSet<_>>();
        let texts = |v: &[RoutingSample]| v.iter().map(|s| normalize_question(&s.text)).collect::<BTreeSet<_>>();

        assert!(ids(&ds.test_in).is_disjoint(&ids(&ds.train)), "case {case}: Q_in and Q_tr overlap");
        assert!(texts(&ds.test_in).is_disjoint(&texts(&ds.train)), "case {case}: texts overlap");
        assert_eq!(ds.in_dbs, ds.train_dbs, "case {case}: D_in != D_tr");
        assert!(ids(&ds.test_out).is_disjoint(&ids(&ds.train)), "case {case}: Q_out and Q_tr overlap");
        assert!(ds.out_dbs.is_disjoint(&ds.train_dbs), "case {case}: D_out and D_tr overlap");
        assert!(dbs(&ds.test_in).is_subset(&ds.in_dbs));
        assert!(dbs(&ds.test_out).is_subset(&ds.out_dbs));

        // Nothing lost or duplicated.
        let total = ds.train.len() + ds.test_in.len() + ds.test_out.len();
        assert_eq!(total, corpus.samples().len());

        // Coverage and the duplicate-question rule, from first principles.
        let mut count: BTreeMap<String, usize> = BTreeMap::new();
        for s in corpus.samples().iter().filter(|s| !s.held_out) {
            *count.entry(normalize_question(&s.text)).or_default() += 1;
        }
        let train_ids = ids(&ds.train);
        for s in corpus.samples().iter().filter(|s| !s.held_out) {
            if count[&normalize_question(&s.text)] > 1 {
                assert!(train_ids.contains(&s.question_id), "case {case}: repeated `{}` left train", s.text);
            }
        }
        let covered = dbs(&ds.test_in);
        for db in &ds.train_dbs {
            let qs: Vec<&RoutingSample> = corpus.samples().iter().filter(|s| &s.gold_db_id == db).collect();
            let movable = qs.iter().filter(|s| count[&normalize_question(&s.text)] == 1).count();
            if qs.len() >= 2 && movable >= 1 {
                assert!(covered.contains(db), "case {case}: `{db}` has no test_in question");
                // At least one question always stays behind for training.
                assert!(ds.train.iter().any(|s| &s.gold_db_id == db));
            } else {
                assert!(ds.report.uncovered_dbs.contains(db), "case {case}: `{db}` not reported");
            }
        }
    }
}

#[test]
fn splits_are_deterministic_under_seed() {
    let corpus = random_corpus(&mut ChaCha8Rng::seed_from_u64(99));
    let a = make_splits(&corpus, 0.3, 5).unwrap().to_split_file();
    let b = make_splits(&corpus, 0.3, 5).unwrap().to_split_file();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn fraction_must_be_open_interval() {
    let corpus = random_corpus(&mut ChaCha8Rng::seed_from_u64(1));
    assert!(make_splits(&corpus, 0.0, 0).is_err());
    assert!(make_splits(&corpus, 1.0, 0).is_err());
}
