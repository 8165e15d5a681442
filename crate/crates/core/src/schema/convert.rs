//! Converters from the Spider and BIRD release layouts into a [`Corpus`].
//!
//! Both releases describe schemas in the same `tables.json` shape. Table names
//! keep their original spelling so they match identifiers in the gold SQL;
//! column names use the normalized (space-separated) spelling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::corpus::read_json;
use super::{ColumnDef, Corpus, DataType, DatabaseSchema, DomainStatement, SchemaError, TableSchema};
use crate::synth::RoutingSample;

#[derive(Deserialize)]
struct RawSchema {
    db_id: String,
    table_names_original: Vec<String>,
    column_names: Vec<(i64, String)>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<serde_json::Value>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

#[derive(Deserialize)]
struct SpiderSample {
    db_id: String,
    question: String,
    #[serde(default)]
    query: Option<String>,
}

#[derive(Deserialize)]
struct BirdSample {
    #[serde(default)]
    question_id: Option<serde_json::Value>,
    db_id: String,
    question: String,
    #[serde(default)]
    evidence: Option<String>,
    #[serde(rename = "SQL", default)]
    sql: Option<String>,
}

fn convert_err(msg: impl Into<String>) -> SchemaError {
    SchemaError::Convert(msg.into())
}

fn raw_to_schema(raw: RawSchema) -> Result<DatabaseSchema, SchemaError> {
    let mut pk = BTreeSet::new();
    for v in &raw.primary_keys {
        match v {
            serde_json::Value::Number(n) => {
                pk.extend(n.as_u64().map(|n| n as usize));
            }
            serde_json::Value::Array(items) => {
                pk.extend(items.iter().filter_map(|n| n.as_u64()).map(|n| n as usize));
            }
            _ => {}
        }
    }
    let fk: BTreeSet<usize> = raw.foreign_keys.iter().map(|&(src, _)| src).collect();

    let mut tables: Vec<(String, Vec<ColumnDef>)> = raw
        .table_names_original
        .iter()
        .map(|t| (t.clone(), Vec::new()))
        .collect();
    for (idx, (table_idx, name)) in raw.column_names.iter().enumerate() {
        if *table_idx < 0 {
            continue;
        }
        let Some((tname, cols)) = tables.get_mut(*table_idx as usize) else {
            return Err(convert_err(format!(
                "{}: column {idx} references missing table {table_idx}",
                raw.db_id
            )));
        };
        let ty = raw.column_types.get(idx).map(String::as_str).unwrap_or("text");
        let mut col_name = name.clone();
        if cols.iter().any(|c: &ColumnDef| c.name == col_name) {
            col_name = raw
                .column_names_original
                .get(idx)
                .map(|(_, n)| n.clone())
                .unwrap_or_else(|| format!("{name} {idx}"));
        }
        if cols.iter().any(|c: &ColumnDef| c.name == col_name) {
            col_name = format!("{col_name} {idx}");
        }
        if col_name.trim().is_empty() {
            return Err(convert_err(format!("{}.{tname}: empty column name", raw.db_id)));
        }
        let mut col = ColumnDef::new(col_name, DataType::normalize(ty));
        col.is_primary_key = pk.contains(&idx);
        col.is_foreign_key = fk.contains(&idx);
        cols.push(col);
    }
    let tables = tables
        .into_iter()
        .filter(|(_, cols)| !cols.is_empty())
        .map(|(name, cols)| TableSchema::new(name, cols))
        .collect::<Result<Vec<_>, _>>()?;
    DatabaseSchema::new(raw.db_id, tables)
}

fn find_file(dir: &Path, names: &[&str]) -> Result<PathBuf, SchemaError> {
    let subdirs = ["", "train", "dev", "train/train", "dev/dev"];
    for name in names {
        for sub in subdirs {
            let p = dir.join(sub).join(name);
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    Err(convert_err(format!(
        "{}: none of {names:?} found",
        dir.display()
    )))
}

fn load_schemas(path: &Path, into: &mut BTreeMap<String, DatabaseSchema>) -> Result<(), SchemaError> {
    let raws: Vec<RawSchema> = read_json(path)?;
    for raw in raws {
        let db = raw_to_schema(raw)?;
        into.entry(db.db_id().to_string()).or_insert(db);
    }
    Ok(())
}

pub(crate) fn spider(dir: &Path) -> Result<Corpus, SchemaError> {
    let mut dbs = BTreeMap::new();
    load_schemas(&find_file(dir, &["tables.json"])?, &mut dbs)?;
    let train: Vec<SpiderSample> = read_json(&find_file(dir, &["train_spider.json"])?)?;
    let dev: Vec<SpiderSample> = read_json(&find_file(dir, &["dev.json"])?)?;
    let mut samples = Vec::with_capacity(train.len() + dev.len());
    for (part, rows, held_out) in [("train", train, false), ("dev", dev, true)] {
        for (i, s) in rows.into_iter().enumerate() {
            samples.push(RoutingSample {
                question_id: format!("spider-{part}-{i:05}"),
                text: s.question.trim().to_string(),
                gold_db_id: s.db_id,
                evidence_ids: Vec::new(),
                sql: s.query,
                held_out,
            });
        }
    }
    let used: BTreeSet<&str> = samples.iter().map(|s| s.gold_db_id.as_str()).collect();
    let dbs: Vec<DatabaseSchema> = dbs.into_values().filter(|d| used.contains(d.db_id())).collect();
    Corpus::new(dbs, samples)
}

pub(crate) fn bird(dir: &Path) -> Result<Corpus, SchemaError> {
    let mut schemas = BTreeMap::new();
    load_schemas(&find_file(dir, &["train_tables.json"])?, &mut schemas)?;
    load_schemas(&find_file(dir, &["dev_tables.json"])?, &mut schemas)?;
    let train: Vec<BirdSample> = read_json(&find_file(dir, &["train.json"])?)?;
    let dev: Vec<BirdSample> = read_json(&find_file(dir, &["dev.json"])?)?;

    // Database metadata is the de-duplicated union of the question evidences.
    let mut metadata: BTreeMap<String, Vec<DomainStatement>> = BTreeMap::new();
    let mut samples = Vec::with_capacity(train.len() + dev.len());
    for (part, rows, held_out) in [("train", train, false), ("dev", dev, true)] {
        for (i, s) in rows.into_iter().enumerate() {
            let statements = metadata.entry(s.db_id.clone()).or_default();
            let mut evidence_ids = Vec::new();
            if let Some(ev) = s.evidence.as_deref().map(str::trim).filter(|e| !e.is_empty()) {
                let id = match statements.iter().find(|st| st.text == ev) {
                    Some(st) => st.id.clone(),
                    None => {
                        let id = format!("{}:e{}", s.db_id, statements.len() + 1);
                        statements.push(DomainStatement::new(id.clone(), ev));
                        id
                    }
                };
                evidence_ids.push(id);
            }
            let qid = match &s.question_id {
                Some(serde_json::Value::Number(n)) => format!("bird-{part}-{n}"),
                Some(serde_json::Value::String(n)) => format!("bird-{part}-{n}"),
                _ => format!("bird-{part}-{i:05}"),
            };
            samples.push(RoutingSample {
                question_id: qid,
                text: s.question.trim().to_string(),
                gold_db_id: s.db_id,
                evidence_ids,
                sql: s.sql,
                held_out,
            });
        }
    }
    let mut dbs = Vec::new();
    for (db_id, db) in schemas {
        let Some(meta) = metadata.remove(&db_id) else {
            continue;
        };
        dbs.push(DatabaseSchema::with_metadata(db_id, db.tables().to_vec(), meta, None)?);
    }
    Corpus::new(dbs, samples)
}
