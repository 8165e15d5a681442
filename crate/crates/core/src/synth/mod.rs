//! Routing datasets (train / in-domain test / cross-domain test) and the
//! labeled sentence-pair files used for contrastive training.

mod pairs;
mod splits;
pub mod sql;
mod subsets;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use pairs::{
    gen_schema_pairs, gen_statement_pairs, gen_table_pairs, NegativePolicy, PairSet, TablePairPolicy,
};
pub use splits::{make_splits, normalize_question, RoutingDataset, SplitFile, SplitReport};
pub use sql::extract_tables_from_sql;
pub use subsets::{cluster_histogram, sample_cluster_matched, sample_db_subsets};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("in-domain fraction must lie strictly between 0 and 1, got {0}")]
    FractionOutOfRange(f64),
    #[error("every database has a single question; no in-domain test set can be drawn")]
    SingleQuestionPerDb,
    #[error("database `{0}` appears in both the training and the held-out partition")]
    OverlappingPartitions(String),
    #[error("split invariant violated: {0}")]
    Invariant(String),
    #[error("unknown question id `{0}` in split file")]
    UnknownQuestion(String),
    #[error("sql for question `{question_id}`: {message}")]
    Sql { question_id: String, message: String },
    #[error("subset size {size} is invalid for {available} available databases")]
    SubsetSize { size: usize, available: usize },
    #[error("cluster-matched sampling infeasible for set {set}: {}", infeasible_reason(*group_size, blocking.as_deref()))]
    InfeasibleClusters {
        set: usize,
        group_size: usize,
        /// Largest cluster too small for the group, when size is the obstacle.
        blocking: Option<String>,
    },
    #[error("unknown negative policy `{0}` (expected all, per-question:K or per-db-pair)")]
    Policy(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn infeasible_reason(group_size: usize, blocking: Option<&str>) -> String {
    match blocking {
        Some(c) => format!("no cluster (largest candidate `{c}`) has {group_size} unused databases left"),
        None => format!("every cluster with {group_size} unused databases is already used by this set"),
    }
}

/// One natural-language question mapped to the only database that answers it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingSample {
    pub question_id: String,
    pub text: String,
    pub gold_db_id: String,
    #[serde(default)]
    pub evidence_ids: Vec<String>,
    #[serde(default)]
    pub sql: Option<String>,
    /// Part of the designated held-out (cross-domain) partition.
    #[serde(default)]
    pub held_out: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Schema,
    Table,
    Statement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeClass {
    Hard,
    Soft,
}

/// Labeled sentence pair: label 1 pulls the two sides together, 0 pushes apart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub question_id: String,
    pub side_a: String,
    pub side_b: String,
    pub label: u8,
    pub kind: PairKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_class: Option<NegativeClass>,
}

impl PairExample {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Writes pairs as line-delimited JSON records.
pub fn write_pairs(path: impl AsRef<Path>, pairs: &[PairExample]) -> Result<(), SynthError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| SynthError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for p in pairs {
        let line = serde_json::to_string(p).expect("pair serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairExample>, SynthError> {
    let path = path.as_ref();
    let err = |message: String| SynthError::Io {
        path: path.display().to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PairExample =
            serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
        if pair.label > 1 || pair.side_a.is_empty() || pair.side_b.is_empty() {
            return Err(err(format!("line {}: label must be 0/1 and sides non-empty", n + 1)));
        }
        out.push(pair);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs = vec![PairExample {
            id: "statement-000000".into(),
            question_id: "q1".into(),
            side_a: "How tall?".into(),
            side_b: "height in cm".into(),
            label: 0,
            kind: PairKind::Statement,
            negative_class: Some(NegativeClass::Hard),
        }];
        write_pairs(&path, &pairs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(r#""kind":"statement""#));
        assert!(text.contains(r#""negative_class":"hard""#));
        assert_eq!(read_pairs(&path).unwrap(), pairs);

        std::fs::write(&path, "{\"id\":\"x\",\"side_a\":\"a\",\"side_b\":\"b\",\"label\":2,\"kind\":\"table\"}\n").unwrap();
        let err = read_pairs(&path).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
