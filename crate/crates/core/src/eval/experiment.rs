//! Experiment protocols: each produces one metrics report per cell and a
//! table with metrics as rows and cells as columns.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, io_err, pct, EvalError, MetricsReport, VerticalClusters};
use crate::retrieval::RankSource;
use crate::synth::{sample_cluster_matched, sample_db_subsets, RoutingDataset, RoutingSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub table: ExperimentTable,
    /// One report per column, same order.
    pub cells: Vec<MetricsReport>,
}

fn metric_values(r: &MetricsReport) -> Vec<(&'static str, f64)> {
    let mut v = vec![("r1", r.overall.r1), ("r3", r.overall.r3), ("map", r.overall.map)];
    if let (Some(w), Some(a)) = (r.within_vertical, r.across_vertical) {
        v.extend([("wv_r1", w.r1), ("av_r1", a.r1), ("av_r3", a.r3), ("av_map", a.map)]);
    }
    v
}

/// Metrics present in every cell, as rows.
fn build_table(title: &str, columns: Vec<String>, cells: &[MetricsReport], notes: Vec<String>) -> ExperimentTable {
    let per_cell: Vec<Vec<(&str, f64)>> = cells.iter().map(metric_values).collect();
    let shortest = per_cell.iter().map(Vec::len).min().unwrap_or(0);
    let rows = (0..shortest)
        .map(|i| TableRow {
            metric: per_cell[0][i].0.to_string(),
            values: per_cell.iter().map(|c| c[i].1).collect(),
        })
        .collect();
    ExperimentTable {
        title: title.to_string(),
        columns,
        rows,
        notes,
    }
}

impl ExperimentTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["metric".to_string()];
        head.extend(self.columns.iter().cloned());
        w.write_record(&head).expect("in-memory write");
        for row in &self.rows {
            let mut rec = vec![row.metric.clone()];
            rec.extend(row.values.iter().map(|&x| pct(x)));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

impl ExperimentReport {
    /// Writes `<stem>.json` (table and every cell) and `<stem>.csv` (table only).
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<(), EvalError> {
        let stem = stem.as_ref();
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let json_path = stem.with_extension("json");
        let csv_path = stem.with_extension("csv");
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;
        fs::write(&csv_path, self.table.to_csv()).map_err(|e| io_err(&csv_path, e))
    }
}

fn restrict(samples: &[RoutingSample], dbs: &BTreeSet<String>) -> Vec<RoutingSample> {
    samples.iter().filter(|s| dbs.contains(&s.gold_db_id)).cloned().collect()
}

/// Re-ranks over nested database subsets; questions are restricted to those
/// whose gold database is in the subset. Columns run from largest to smallest.
pub fn subset_scaling(
    source: &dyn RankSource,
    samples: &[RoutingSample],
    pool: &BTreeSet<String>,
    sizes: &[usize],
    seed: u64,
    clusters: Option<&VerticalClusters>,
    threads: usize,
) -> Result<ExperimentReport, EvalError> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes.dedup();
    let subsets = sample_db_subsets(pool, &sizes, seed)?;
    let mut cells = Vec::new();
    for subset in &subsets {
        let qs = restrict(samples, subset);
        cells.push(evaluate(source, &qs, Some(subset), clusters, threads)?);
    }
    let monotone = cells.windows(2).all(|w| w[0].overall.r1 <= w[1].overall.r1);
    let notes = vec![format!(
        "R@1 {} as the repository shrinks",
        if monotone { "does not decrease" } else { "is not monotone" }
    )];
    let columns = sizes.iter().map(|s| format!("{s} DBs")).collect();
    Ok(ExperimentReport {
        table: build_table("subset scaling", columns, &cells, notes),
        cells,
    })
}

/// Evaluates `n_sets` repositories whose cluster-size histogram matches
/// `reference`, plus a column averaging them.
#[allow(clippy::too_many_arguments)]
pub fn cluster_matched(
    source: &dyn RankSource,
    samples: &[RoutingSample],
    pool: &BTreeSet<String>,
    clusters: &VerticalClusters,
    reference: &[usize],
    n_sets: usize,
    disjoint: bool,
    seed: u64,
    threads: usize,
) -> Result<ExperimentReport, EvalError> {
    let sets = sample_cluster_matched(pool, &clusters.0, reference, n_sets, disjoint, seed)?;
    let mut cells = Vec::new();
    for set in &sets {
        let qs = restrict(samples, set);
        cells.push(evaluate(source, &qs, Some(set), Some(clusters), threads)?);
    }
    let mut columns: Vec<String> = (1..=sets.len()).map(|i| format!("set {i}")).collect();
    let mut table = build_table(
        "cluster-matched sampling",
        columns.clone(),
        &cells,
        vec![format!(
            "{} sets drawn {}",
            sets.len(),
            if disjoint { "without replacement" } else { "independently" }
        )],
    );
    for row in &mut table.rows {
        let m = row.values.iter().sum::<f64>() / row.values.len() as f64;
        row.values.push(m);
    }
    columns.push("mean".into());
    table.columns = columns;
    Ok(ExperimentReport { table, cells })
}

/// Runs several sources on the same questions and scope, one column each.
pub fn compare_sources(
    title: &str,
    sources: &[(&str, &dyn RankSource)],
    samples: &[RoutingSample],
    scope: Option<&BTreeSet<String>>,
    clusters: Option<&VerticalClusters>,
    threads: usize,
) -> Result<ExperimentReport, EvalError> {
    let mut cells = Vec::new();
    for (_, s) in sources {
        cells.push(evaluate(*s, samples, scope, clusters, threads)?);
    }
    let columns = sources.iter().map(|(l, _)| l.to_string()).collect();
    Ok(ExperimentReport {
        table: build_table(title, columns, &cells, vec![]),
        cells,
    })
}

/// In-domain questions ranked over the training databases and cross-domain
/// questions ranked over the held-out databases.
pub fn in_vs_cross(
    source: &dyn RankSource,
    dataset: &RoutingDataset,
    clusters: Option<&VerticalClusters>,
    threads: usize,
) -> Result<ExperimentReport, EvalError> {
    let cells = vec![
        evaluate(source, &dataset.test_in, Some(&dataset.in_dbs), clusters, threads)?,
        evaluate(source, &dataset.test_out, Some(&dataset.out_dbs), clusters, threads)?,
    ];
    let columns = vec!["test_in".to_string(), "test_out".to_string()];
    Ok(ExperimentReport {
        table: build_table("in-domain vs cross-domain", columns, &cells, vec![]),
        cells,
    })
}
