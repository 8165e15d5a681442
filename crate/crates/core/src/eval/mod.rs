//! Routing metrics, per-question evaluation and report files.

mod experiment;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::retrieval::{RankSource, RankedList, RetrievalError};
use crate::synth::{RoutingSample, SynthError};

pub use experiment::{
    cluster_matched, compare_sources, in_vs_cross, subset_scaling, ExperimentReport, ExperimentTable, TableRow,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("database `{0}` has no cluster")]
    Unclustered(String),
    #[error("question `{question_id}`: {source}")]
    Ranking {
        question_id: String,
        #[source]
        source: RetrievalError,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Mapping from database id to its vertical (domain) cluster.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VerticalClusters(pub BTreeMap<String, String>);

impl VerticalClusters {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }

    /// Every database in its own cluster.
    pub fn singletons<'a>(dbs: impl IntoIterator<Item = &'a str>) -> Self {
        VerticalClusters(dbs.into_iter().map(|d| (d.to_string(), d.to_string())).collect())
    }

    pub fn cluster_of(&self, db: &str) -> Result<&str, EvalError> {
        self.0.get(db).map(String::as_str).ok_or_else(|| EvalError::Unclustered(db.to_string()))
    }

    /// True when no two of `dbs` share a cluster.
    pub fn all_singletons<'a>(&self, dbs: impl IntoIterator<Item = &'a str>) -> bool {
        let mut seen = BTreeSet::new();
        dbs.into_iter().all(|d| seen.insert(self.0.get(d).map_or(d, String::as_str)))
    }

    pub fn merged(&self, other: &VerticalClusters) -> VerticalClusters {
        let mut m = self.0.clone();
        m.extend(other.0.iter().map(|(k, v)| (k.clone(), v.clone())));
        VerticalClusters(m)
    }
}

/// 1 when gold is within the first `k` entries. Gold missing counts as 0.
pub fn recall_at_k(ranked: &RankedList, gold: &str, k: usize) -> Result<u8, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    Ok(u8::from(ranked.top(k).iter().any(|e| e.db_id == gold)))
}

/// 1 / rank of gold; 0 when gold is missing.
pub fn average_precision(ranked: &RankedList, gold: &str) -> f64 {
    ranked.rank_of(gold).map_or(0.0, |r| 1.0 / r as f64)
}

/// (within-vertical R@1, across-vertical R@1) for the top-ranked database.
pub fn vertical_r1(ranked: &RankedList, gold: &str, clusters: &VerticalClusters) -> Result<(u8, u8), EvalError> {
    let pred = &ranked.entries.first().ok_or(EvalError::Empty)?.db_id;
    if pred == gold {
        return Ok((1, 1));
    }
    if clusters.cluster_of(pred)? == clusters.cluster_of(gold)? {
        Ok((0, 1))
    } else {
        Ok((1, 0))
    }
}

/// Across-vertical R@k and AP: a hit is any database in gold's cluster.
pub fn across_vertical_rk_map(
    ranked: &RankedList,
    gold: &str,
    clusters: &VerticalClusters,
    k: usize,
) -> Result<(u8, f64), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let gc = clusters.cluster_of(gold)?;
    let mut first = None;
    for (i, e) in ranked.entries.iter().enumerate() {
        if clusters.cluster_of(&e.db_id)? == gc {
            first = Some(i + 1);
            break;
        }
    }
    Ok(match first {
        Some(r) => (u8::from(r <= k), 1.0 / r as f64),
        None => (0, 0.0),
    })
}

/// Per-question outcome, kept in reports for auditing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub question_id: String,
    pub gold_db_id: String,
    pub predicted: Vec<String>,
    pub gold_rank: Option<usize>,
    pub r1: u8,
    pub r3: u8,
    pub ap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertical: Option<VerticalRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerticalRow {
    pub within_r1: u8,
    pub across_r1: u8,
    pub across_r3: u8,
    pub across_ap: f64,
}

/// Metrics for one ranked list.
pub fn score_question(
    ranked: &RankedList,
    gold: &str,
    clusters: Option<&VerticalClusters>,
) -> Result<QuestionRow, EvalError> {
    let vertical = match clusters {
        Some(c) => {
            let (within_r1, across_r1) = vertical_r1(ranked, gold, c)?;
            let (across_r3, across_ap) = across_vertical_rk_map(ranked, gold, c, 3)?;
            Some(VerticalRow {
                within_r1,
                across_r1,
                across_r3,
                across_ap,
            })
        }
        None => None,
    };
    let gold_rank = ranked.rank_of(gold);
    if gold_rank.is_none() {
        log::warn!("gold database `{gold}` missing from the ranking of {}", ranked.question_id);
    }
    Ok(QuestionRow {
        question_id: ranked.question_id.clone(),
        gold_db_id: gold.to_string(),
        predicted: ranked.top(3).iter().map(|e| e.db_id.clone()).collect(),
        gold_rank,
        r1: recall_at_k(ranked, gold, 1)?,
        r3: recall_at_k(ranked, gold, 3)?,
        ap: average_precision(ranked, gold),
        vertical,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub r1: f64,
    pub r3: f64,
    pub map: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WithinVertical {
    pub r1: f64,
}

/// Percentages over all questions. Vertical columns are absent when no
/// clusters were given or every database is its own cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub overall: Overall,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_vertical: Option<WithinVertical>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub across_vertical: Option<Overall>,
    /// Questions whose gold database was missing from the ranking.
    pub warnings: usize,
    pub rows: Vec<QuestionRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    100.0 * s / n as f64
}

/// Folds per-question rows into percentages. `vertical` keeps the vertical
/// columns (when every row carries them).
pub fn aggregate(rows: Vec<QuestionRow>, vertical: bool) -> Result<MetricsReport, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    // Sum in a fixed order so that reordering the input cannot change the result.
    let mut rows = rows;
    // Total order over every field, so sums see the same sequence whatever
    // the input order.
    let key = |r: &QuestionRow| {
        let v = r.vertical.map(|v| (v.within_r1, v.across_r1, v.across_r3, v.across_ap.to_bits()));
        (r.question_id.clone(), r.gold_db_id.clone(), r.predicted.clone(), r.gold_rank, r.r1, r.r3, r.ap.to_bits(), v)
    };
    rows.sort_by_cached_key(key);
    let overall = Overall {
        r1: mean(rows.iter().map(|r| r.r1 as f64)),
        r3: mean(rows.iter().map(|r| r.r3 as f64)),
        map: mean(rows.iter().map(|r| r.ap)),
    };
    let vrows: Option<Vec<VerticalRow>> = if vertical {
        rows.iter().map(|r| r.vertical).collect()
    } else {
        None
    };
    let (within_vertical, across_vertical) = match vrows {
        Some(v) => (
            Some(WithinVertical {
                r1: mean(v.iter().map(|x| x.within_r1 as f64)),
            }),
            Some(Overall {
                r1: mean(v.iter().map(|x| x.across_r1 as f64)),
                r3: mean(v.iter().map(|x| x.across_r3 as f64)),
                map: mean(v.iter().map(|x| x.across_ap)),
            }),
        ),
        None => (None, None),
    };
    Ok(MetricsReport {
        n: rows.len(),
        warnings: rows.iter().filter(|r| r.gold_rank.is_none()).count(),
        overall,
        within_vertical,
        across_vertical,
        rows,
    })
}

/// Ranks every sample with `source` (in parallel) and aggregates.
pub fn evaluate(
    source: &dyn RankSource,
    samples: &[RoutingSample],
    scope: Option<&BTreeSet<String>>,
    clusters: Option<&VerticalClusters>,
    threads: usize,
) -> Result<MetricsReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let dbs: Vec<String> = match scope {
        Some(s) => s.iter().cloned().collect(),
        None => samples.iter().map(|s| s.gold_db_id.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let vertical = clusters.filter(|c| !c.all_singletons(dbs.iter().map(String::as_str)));
    let one = |s: &RoutingSample| -> Result<QuestionRow, EvalError> {
        let ranked = source
            .rank(&s.question_id, &s.text, scope)
            .map_err(|source| EvalError::Ranking {
                question_id: s.question_id.clone(),
                source,
            })?;
        score_question(&ranked, &s.gold_db_id, vertical)
    };
    let threads = threads.clamp(1, samples.len());
    let chunk = samples.len().div_ceil(threads);
    let rows: Vec<QuestionRow> = if threads == 1 {
        samples.iter().map(one).collect::<Result<_, _>>()?
    } else {
        thread::scope(|sc| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .map(|part| sc.spawn(move || part.iter().map(one).collect::<Result<Vec<_>, _>>()))
                .collect();
            let mut out = Vec::with_capacity(samples.len());
            for h in handles {
                out.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, EvalError>(out)
        })?
    };
    aggregate(rows, vertical.is_some())
}

fn pct(x: f64) -> String {
    format!("{x:.2}")
}

impl MetricsReport {
    /// Summary header and one value row, percentages to two decimals.
    pub fn summary_csv(&self, label: &str) -> String {
        let mut head = vec!["label", "n", "r1", "r3", "map"];
        let mut vals = vec![label.to_string(), self.n.to_string(), pct(self.overall.r1), pct(self.overall.r3), pct(self.overall.map)];
        if let (Some(w), Some(a)) = (self.within_vertical, self.across_vertical) {
            head.extend(["wv_r1", "av_r1", "av_r3", "av_map"]);
            vals.extend([pct(w.r1), pct(a.r1), pct(a.r3), pct(a.map)]);
        }
        head.push("warnings");
        vals.push(self.warnings.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&head).expect("in-memory write");
        w.write_record(&vals).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Writes `<stem>.json` (with per-question rows) and `<stem>.csv`.
    pub fn write(&self, stem: impl AsRef<Path>, label: &str) -> Result<(), EvalError> {
        let stem = stem.as_ref();
        let json_path = stem.with_extension("json");
        let csv_path = stem.with_extension("csv");
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;
        fs::write(&csv_path, self.summary_csv(label)).map_err(|e| io_err(&csv_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{RankedEntry, Strategy};

    fn list(ids: &[&str]) -> RankedList {
        let n = ids.len() as f64;
        RankedList::new(
            "q",
            Strategy::WholeSchema,
            ids.iter()
                .enumerate()
                .map(|(i, d)| RankedEntry {
                    db_id: d.to_string(),
                    score: n - i as f64,
                    top_tables: vec![],
                    prior_score: None,
                })
                .collect(),
        )
    }

    fn clusters(pairs: &[(&str, &str)]) -> VerticalClusters {
        VerticalClusters(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
    }

    #[test]
    fn recall_and_ap() {
        let l = list(&["a", "b", "c", "d"]);
        assert_eq!(recall_at_k(&l, "a", 1).unwrap(), 1);
        assert_eq!(recall_at_k(&l, "c", 3).unwrap(), 1);
        assert_eq!(recall_at_k(&l, "d", 3).unwrap(), 0);
        assert_eq!(average_precision(&l, "a"), 1.0);
        assert_eq!(average_precision(&l, "b"), 0.5);
        assert_eq!(average_precision(&l, "d"), 0.25);
        assert_eq!(average_precision(&l, "zz"), 0.0);
        assert!(recall_at_k(&l, "a", 0).is_err());
    }

    #[test]
    fn vertical_cases() {
        let c = clusters(&[("a", "x"), ("b", "x"), ("c", "y")]);
        assert_eq!(vertical_r1(&list(&["a", "b", "c"]), "a", &c).unwrap(), (1, 1));
        assert_eq!(vertical_r1(&list(&["b", "a", "c"]), "a", &c).unwrap(), (0, 1));
        assert_eq!(vertical_r1(&list(&["c", "a", "b"]), "a", &c).unwrap(), (1, 0));
        assert!(vertical_r1(&list(&["q"]), "a", &c).is_err());
    }

    #[test]
    fn across_vertical_first_cluster_match() {
        let c = clusters(&[("a", "x"), ("b", "y"), ("c", "x"), ("d", "z"), ("e", "w"), ("g", "s")]);
        assert_eq!(across_vertical_rk_map(&list(&["b", "c", "a"]), "a", &c, 3).unwrap(), (1, 0.5));
        assert_eq!(across_vertical_rk_map(&list(&["a", "b"]), "a", &c, 3).unwrap(), (1, 1.0));
        assert_eq!(across_vertical_rk_map(&list(&["b", "d", "e", "g", "a"]), "a", &c, 3).unwrap(), (0, 0.2));
    }

    #[test]
    fn aggregate_percentages() {
        let rows = vec![
            score_question(&list(&["a", "b"]), "a", None).unwrap(),
            score_question(&list(&["b", "a"]), "a", None).unwrap(),
        ];
        let r = aggregate(rows.clone(), false).unwrap();
        assert_eq!(r.overall.r1, 50.0);
        assert_eq!(r.overall.r3, 100.0);
        assert_eq!(r.overall.map, 75.0);
        assert!(r.within_vertical.is_none());
        let mut rev = rows;
        rev.reverse();
        assert_eq!(aggregate(rev, false).unwrap(), r);
        assert!(aggregate(vec![], false).is_err());
        assert!(r.summary_csv("x").starts_with("label,n,r1,r3,map,warnings\nx,2,50.00,100.00,75.00,0\n"));
    }
}
