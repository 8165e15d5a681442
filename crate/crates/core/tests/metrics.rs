use std::collections::BTreeMap;
use std::time::Instant;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dbrouter_core::eval::{
    aggregate, average_precision, recall_at_k, score_question, vertical_r1, VerticalClusters,
};
use dbrouter_core::retrieval::{RankedEntry, RankedList, Strategy as Ranking};

fn list(ids: &[String]) -> RankedList {
    // Strictly decreasing scores keep the given order.
    let n = ids.len();
    let entries = ids
        .iter()
        .enumerate()
        .map(|(i, id)| RankedEntry {
            db_id: id.clone(),
            score: (n - i) as f64,
            top_tables: vec![],
            prior_score: None,
        })
        .collect();
    RankedList::new("q", Ranking::WholeSchema, entries)
}

// Brute-force reference implementations, written against plain slices.

fn oracle_recall(ids: &[String], gold: &str, k: usize) -> u8 {
    let mut hit = 0;
    for id in ids.iter().take(k) {
        if id == gold {
            hit = 1;
        }
    }
    hit
}

fn oracle_ap(ids: &[String], gold: &str) -> f64 {
    // Single relevant item: precision at its rank.
    for (i, id) in ids.iter().enumerate() {
        if id == gold {
            let relevant_so_far = 1.0;
            return relevant_so_far / (i + 1) as f64;
        }
    }
    0.0
}

fn oracle_vertical(ids: &[String], gold: &str, clusters: &BTreeMap<String, String>) -> (u8, u8) {
    let top = &ids[0];
    let same_cluster = clusters[top] == clusters[gold];
    // Within-vertical only fails on a wrong pick inside gold's cluster;
    // across-vertical only fails on a pick outside it.
    let within = u8::from(top == gold || !same_cluster);
    let across = u8::from(same_cluster);
    (within, across)
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<String>, String, BTreeMap<String, String>) {
    let n = rng.random_range(1..=12);
    let mut ids: Vec<String> = (0..n).map(|i| format!("db{i}")).collect();
    ids.shuffle(rng);
    let n_clusters = rng.random_range(1..=n);
    let clusters = ids.iter().map(|d| (d.clone(), format!("c{}", rng.random_range(0..n_clusters)))).collect();
    let gold = ids[rng.random_range(0..n)].clone();
    (ids, gold, clusters)
}

#[test]
fn metric_oracle_on_random_lists() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rows = Vec::new();
    let (mut sum_r1, mut sum_r3, mut sum_ap) = (0u64, 0u64, 0.0f64);
    for _ in 0..1000 {
        let (ids, gold, cmap) = random_case(&mut rng);
        let ranked = list(&ids);
        let clusters = VerticalClusters(cmap.clone());
        for k in 1..=ids.len() + 1 {
            assert_eq!(recall_at_k(&ranked, &gold, k).unwrap(), oracle_recall(&ids, &gold, k));
        }
        assert_eq!(average_precision(&ranked, &gold), oracle_ap(&ids, &gold));
        assert_eq!(vertical_r1(&ranked, &gold, &clusters).unwrap(), oracle_vertical(&ids, &gold, &cmap));
        sum_r1 += oracle_recall(&ids, &gold, 1) as u64;
        sum_r3 += oracle_recall(&ids, &gold, 3) as u64;
        sum_ap += oracle_ap(&ids, &gold);
        rows.push(score_question(&ranked, &gold, None).unwrap());
    }
    let report = aggregate(rows, false).unwrap();
    assert_eq!(report.n, 1000);
    assert_eq!(report.overall.r1, 100.0 * sum_r1 as f64 / 1000.0);
    assert_eq!(report.overall.r3, 100.0 * sum_r3 as f64 / 1000.0);
    approx::assert_relative_eq!(report.overall.map, 100.0 * sum_ap / 1000.0, max_relative = 1e-12);
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn recall_rejects_zero_k() {
    let ranked = list(&["a".into()]);
    assert!(recall_at_k(&ranked, "a", 0).is_err());
}

#[test]
fn vertical_truth_table_three_dbs() {
    // Every placement of the gold and top database over a 3-DB repository
    // with two clusters.
    let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let cmap: BTreeMap<String, String> =
        [("a", "x"), ("b", "x"), ("c", "y")].iter().map(|(d, c)| (d.to_string(), c.to_string())).collect();
    let clusters = VerticalClusters(cmap.clone());
    for top in &ids {
        for gold in &ids {
            let mut order = vec![top.clone()];
            order.extend(ids.iter().filter(|d| *d != top).cloned());
            let got = vertical_r1(&list(&order), gold, &clusters).unwrap();
            let expected = if top == gold {
                (1, 1)
            } else if cmap[top] == cmap[gold] {
                (0, 1)
            } else {
                (1, 0)
            };
            assert_eq!(got, expected, "top {top} gold {gold}");
        }
    }
}

#[test]
fn vertical_needs_cluster_for_every_db() {
    let clusters = VerticalClusters([("a".to_string(), "x".to_string())].into());
    assert!(vertical_r1(&list(&["b".into(), "a".into()]), "a", &clusters).is_err());
}

#[test]
fn hand_placed_fixture() {
    // Ten questions with the gold placed at known ranks.
    let repo: Vec<String> = (0..5).map(|i| format!("d{i}")).collect();
    let ranks = [1usize, 1, 2, 3, 5, 1, 4, 2, 1, 3];
    let mut rows = Vec::new();
    for (q, &r) in ranks.iter().enumerate() {
        let mut order = repo.clone();
        let gold = format!("g{q}");
        order.insert(r - 1, gold.clone());
        rows.push(score_question(&list(&order), &gold, None).unwrap());
    }
    let report = aggregate(rows, false).unwrap();
    assert_eq!(report.overall.r1, 40.0);
    assert_eq!(report.overall.r3, 80.0);
    let map = (1.0 + 1.0 + 0.5 + 1.0 / 3.0 + 0.2 + 1.0 + 0.25 + 0.5 + 1.0 + 1.0 / 3.0) / 10.0 * 100.0;
    approx::assert_relative_eq!(report.overall.map, map, max_relative = 1e-12);
}

fn arb_case() -> impl Strategy<Value = (Vec<String>, String, BTreeMap<String, String>)> {
    any::<u64>().prop_map(|seed| random_case(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #[test]
    fn vertical_never_zero_zero((ids, gold, cmap) in arb_case()) {
        let v = vertical_r1(&list(&ids), &gold, &VerticalClusters(cmap)).unwrap();
        prop_assert_ne!(v, (0, 0));
    }

    #[test]
    fn aggregate_is_permutation_invariant(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for i in 0..n {
            let (ids, gold, cmap) = random_case(&mut rng);
            let mut ranked = list(&ids);
            ranked.question_id = format!("q{}", i % 7);
            rows.push(score_question(&ranked, &gold, Some(&VerticalClusters(cmap))).unwrap());
        }
        let a = aggregate(rows.clone(), true).unwrap();
        rows.shuffle(&mut rng);
        let b = aggregate(rows, true).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
