use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use dbrouter_core::embedding::{cosine_slices, DeterministicTestProvider, Embedder, EmbeddingVector};
use dbrouter_core::retrieval::{build_index, pool_top_k, AdapterSet, Granularities, Router, RouterConfig, Strategy};
use dbrouter_core::schema::{render_table, Corpus};

#[test]
fn paper_pooling_case_is_exact() {
    let sims = [("t1", 0.9f64), ("t2", 0.7), ("t3", 0.5), ("t4", 0.1)];
    let (score, tables) = pool_top_k(&sims, 3).unwrap();
    assert_eq!(score, 0.7);
    assert_eq!(tables, ["t1", "t2", "t3"]);
}

fn unit(v: &[f32]) -> Vec<f64> {
    let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Exhaustive: every table cosine, sorted, mean of the best three.
fn oracle_pooled(p: &DeterministicTestProvider, question: &str, db: &dbrouter_core::schema::DatabaseSchema) -> f64 {
    let q = unit(&p.embed_text(question));
    let mut sims: Vec<f64> = db.tables().iter().map(|t| oracle_cos(&q, &unit(&p.embed_text(&render_table(t))))).collect();
    sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = &sims[..sims.len().min(3)];
    top.iter().sum::<f64>() / top.len() as f64
}

#[test]
fn pooled_score_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let questions = ["How many singers are there?", "List the total amount per owner", "oldest town by year"];
    for i in 0..500 {
        let n_dbs = rng.random_range(1..=3);
        let dbs = (0..n_dbs).map(|d| common::database(&mut rng, &format!("db{d}"), 6)).collect();
        let corpus = Arc::new(Corpus::new(dbs, vec![]).unwrap());
        let provider = DeterministicTestProvider::new(16, i).unwrap();
        let embedder = Arc::new(Embedder::uncached(Arc::new(provider.clone())));
        let g = Granularities { schema: false, tables: true, statements: false };
        let index = build_index::<f64>(&corpus, &embedder, &AdapterSet::default(), g).unwrap();
        let router = Router::new(Arc::new(index), embedder, AdapterSet::default(), corpus.clone(), RouterConfig::default()).unwrap();
        let question = questions[i as usize % questions.len()];
        for db in corpus.databases() {
            let (got, tables) = router.score_db(question, db.db_id(), Strategy::PooledTables).unwrap();
            let want = oracle_pooled(&provider, question, db);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "index {i} db {}: {got} vs {want}",
                db.db_id()
            );
            assert_eq!(tables.len(), db.tables().len().min(3));
        }
    }
}

proptest! {
    #[test]
    fn cosine_is_bounded_and_symmetric(
        a in prop::collection::vec(-10.0f64..10.0, 8),
        b in prop::collection::vec(-10.0f64..10.0, 8),
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-6) && b.iter().any(|x| x.abs() > 1e-6));
        let ab = cosine_slices(&a, &b).unwrap();
        let ba = cosine_slices(&b, &a).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((ab - oracle_cos(&a, &b)).abs() < 1e-12);
        let ua = EmbeddingVector::normalized(a.clone()).unwrap();
        prop_assert!((cosine_slices(ua.values(), ua.values()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pooled_score_is_mean_of_best(sims in prop::collection::vec(-1.0f64..1.0, 1..12), k in 1usize..5) {
        let named: Vec<(String, f64)> = sims.iter().enumerate().map(|(i, s)| (format!("t{i}"), *s)).collect();
        let (score, tables) = pool_top_k(&named, k).unwrap();
        let mut sorted = sims.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let take = k.min(sims.len());
        let want = sorted[..take].iter().sum::<f64>() / take as f64;
        prop_assert!((score - want).abs() < 1e-12);
        prop_assert_eq!(tables.len(), take);
        prop_assert!(score <= sorted[0] + 1e-12);
    }
}
