//! The neutral corpus manifest: `databases.json` + `samples.json` in one directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColumnDef, DataType, DatabaseSchema, DomainStatement, SchemaError, TableSchema};
use crate::synth::RoutingSample;

pub const DATABASES_FILE: &str = "databases.json";
pub const SAMPLES_FILE: &str = "samples.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestColumn {
    pub name: String,
    #[serde(rename = "type")]
    pub data_type: DataType,
    #[serde(default)]
    pub pk: bool,
    #[serde(default)]
    pub fk: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestTable {
    pub name: String,
    pub columns: Vec<ManifestColumn>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestDatabase {
    pub db_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<String>,
    pub tables: Vec<ManifestTable>,
    #[serde(default)]
    pub metadata: Vec<DomainStatement>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestSample {
    pub question_id: String,
    pub text: String,
    pub gold_db_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
    /// `"train"` (default) or `"heldout"`; held-out samples form the
    /// cross-domain test set unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl ManifestDatabase {
    pub fn into_schema(self) -> Result<DatabaseSchema, SchemaError> {
        let tables = self
            .tables
            .into_iter()
            .map(|t| {
                let cols = t
                    .columns
                    .into_iter()
                    .map(|c| ColumnDef {
                        name: c.name,
                        data_type: c.data_type,
                        is_primary_key: c.pk,
                        is_foreign_key: c.fk,
                    })
                    .collect();
                TableSchema::new(t.name, cols)
            })
            .collect::<Result<Vec<_>, _>>()?;
        DatabaseSchema::with_metadata(self.db_id, tables, self.metadata, self.cluster_id)
    }

    pub fn from_schema(db: &DatabaseSchema) -> Self {
        ManifestDatabase {
            db_id: db.db_id().to_string(),
            cluster_id: db.cluster_id().map(str::to_string),
            tables: db
                .tables()
                .iter()
                .map(|t| ManifestTable {
                    name: t.name().to_string(),
                    columns: t
                        .columns()
                        .iter()
                        .map(|c| ManifestColumn {
                            name: c.name.clone(),
                            data_type: c.data_type.clone(),
                            pk: c.is_primary_key,
                            fk: c.is_foreign_key,
                        })
                        .collect(),
                })
                .collect(),
            metadata: db.metadata().to_vec(),
        }
    }
}

impl From<ManifestSample> for RoutingSample {
    fn from(s: ManifestSample) -> Self {
        RoutingSample {
            question_id: s.question_id,
            text: s.text,
            gold_db_id: s.gold_db_id,
            evidence_ids: s.evidence_ids.unwrap_or_default(),
            sql: s.sql,
            held_out: s.split.as_deref() == Some("heldout"),
        }
    }
}

impl From<&RoutingSample> for ManifestSample {
    fn from(s: &RoutingSample) -> Self {
        ManifestSample {
            question_id: s.question_id.clone(),
            text: s.text.clone(),
            gold_db_id: s.gold_db_id.clone(),
            evidence_ids: (!s.evidence_ids.is_empty()).then(|| s.evidence_ids.clone()),
            sql: s.sql.clone(),
            split: Some(if s.held_out { "heldout" } else { "train" }.to_string()),
        }
    }
}

/// Cross-validated collection of databases and questions.
#[derive(Clone, Debug)]
pub struct Corpus {
    databases: Vec<DatabaseSchema>,
    samples: Vec<RoutingSample>,
    db_pos: BTreeMap<String, usize>,
    sample_pos: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(databases: Vec<DatabaseSchema>, samples: Vec<RoutingSample>) -> Result<Self, SchemaError> {
        let mut db_pos = BTreeMap::new();
        for (i, db) in databases.iter().enumerate() {
            if db_pos.insert(db.db_id().to_string(), i).is_some() {
                return Err(SchemaError::DuplicateDb(db.db_id().to_string()));
            }
        }
        let mut sample_pos = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if sample_pos.insert(s.question_id.clone(), i).is_some() {
                return Err(SchemaError::DuplicateQuestion(s.question_id.clone()));
            }
            if s.text.trim().is_empty() {
                return Err(SchemaError::EmptyQuestion(s.question_id.clone()));
            }
            let Some(&dbi) = db_pos.get(&s.gold_db_id) else {
                return Err(SchemaError::UnknownDb {
                    question_id: s.question_id.clone(),
                    db_id: s.gold_db_id.clone(),
                });
            };
            let db = &databases[dbi];
            for e in &s.evidence_ids {
                if db.statement(e).is_none() {
                    return Err(SchemaError::UnknownStatement {
                        question_id: s.question_id.clone(),
                        db_id: s.gold_db_id.clone(),
                        statement_id: e.clone(),
                    });
                }
            }
        }
        Ok(Corpus {
            databases,
            samples,
            db_pos,
            sample_pos,
        })
    }

    /// Loads and validates a manifest directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let dir = dir.as_ref();
        let dbs: Vec<ManifestDatabase> = read_json(&dir.join(DATABASES_FILE))?;
        let samples: Vec<ManifestSample> = read_json(&dir.join(SAMPLES_FILE))?;
        let dbs = dbs
            .into_iter()
            .map(ManifestDatabase::into_schema)
            .collect::<Result<Vec<_>, _>>()?;
        Corpus::new(dbs, samples.into_iter().map(RoutingSample::from).collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SchemaError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let dbs: Vec<ManifestDatabase> = self.databases.iter().map(ManifestDatabase::from_schema).collect();
        let samples: Vec<ManifestSample> = self.samples.iter().map(ManifestSample::from).collect();
        write_json(&dir.join(DATABASES_FILE), &dbs)?;
        write_json(&dir.join(SAMPLES_FILE), &samples)
    }

    /// Converts a Spider release directory (`tables.json`, `train_spider.json`, `dev.json`).
    pub fn from_spider(dir: impl AsRef<Path>) -> Result<Self, SchemaError> {
        super::convert::spider(dir.as_ref())
    }

    /// Converts a BIRD release directory (train/dev json + table files).
    pub fn from_bird(dir: impl AsRef<Path>) -> Result<Self, SchemaError> {
        super::convert::bird(dir.as_ref())
    }

    pub fn databases(&self) -> &[DatabaseSchema] {
        &self.databases
    }

    pub fn samples(&self) -> &[RoutingSample] {
        &self.samples
    }

    pub fn database(&self, db_id: &str) -> Option<&DatabaseSchema> {
        self.db_pos.get(db_id).map(|&i| &self.databases[i])
    }

    pub fn sample(&self, question_id: &str) -> Option<&RoutingSample> {
        self.sample_pos.get(question_id).map(|&i| &self.samples[i])
    }

    pub fn db_ids(&self) -> BTreeSet<String> {
        self.db_pos.keys().cloned().collect()
    }

    /// Assigns vertical-cluster labels; databases missing from `clusters` keep theirs.
    pub fn apply_clusters(&mut self, clusters: &BTreeMap<String, String>) {
        for db in &mut self.databases {
            if let Some(c) = clusters.get(db.db_id()) {
                db.set_cluster_id(Some(c.clone()));
            }
        }
    }

    /// question_id → evidence statement ids, for questions that have any.
    pub fn evidence_map(&self) -> BTreeMap<&str, &[String]> {
        self.samples
            .iter()
            .filter(|s| !s.evidence_ids.is_empty())
            .map(|s| (s.question_id.as_str(), s.evidence_ids.as_slice()))
            .collect()
    }

    /// question_id → gold SQL, for questions that have it.
    pub fn sql_map(&self) -> BTreeMap<&str, &str> {
        self.samples
            .iter()
            .filter_map(|s| s.sql.as_deref().map(|q| (s.question_id.as_str(), q)))
            .collect()
    }

    /// Evidence statements of a sample, in the sample's order.
    pub fn evidence(&self, sample: &RoutingSample) -> Vec<&DomainStatement> {
        let Some(db) = self.database(&sample.gold_db_id) else {
            return Vec::new();
        };
        sample.evidence_ids.iter().filter_map(|id| db.statement(id)).collect()
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> SchemaError {
    SchemaError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SchemaError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| SchemaError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SchemaError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| SchemaError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    const DBS: &str = r#"[
      {"db_id": "music", "cluster_id": "arts", "tables": [
         {"name": "song", "columns": [{"name": "song id", "type": "integer", "pk": true}, {"name": "title", "type": "text"}]}],
       "metadata": [{"id": "m1", "text": "title is the song title"}]},
      {"db_id": "flights", "tables": [
         {"name": "flight", "columns": [{"name": "flight no", "type": "number", "pk": true, "fk": false}]}]}
    ]"#;

    #[test]
    fn loads_small_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), DATABASES_FILE, DBS);
        write(
            dir.path(),
            SAMPLES_FILE,
            r#"[
              {"question_id": "q1", "text": "List song titles.", "gold_db_id": "music", "evidence_ids": ["m1"], "sql": "SELECT title FROM song"},
              {"question_id": "q2", "text": "How many flights?", "gold_db_id": "flights"},
              {"question_id": "q3", "text": "Count songs.", "gold_db_id": "music", "split": "heldout"}
            ]"#,
        );
        let corpus = Corpus::load(dir.path()).unwrap();
        assert_eq!(corpus.databases().len(), 2);
        assert_eq!(corpus.samples().len(), 3);
        assert_eq!(corpus.database("flights").unwrap().tables()[0].columns()[0].data_type, DataType::Integer);
        assert_eq!(corpus.evidence_map().len(), 1);
        assert_eq!(corpus.sql_map()["q1"], "SELECT title FROM song");
        assert!(corpus.sample("q3").unwrap().held_out);
        assert_eq!(corpus.database("music").unwrap().cluster_id(), Some("arts"));

        let out = tempfile::tempdir().unwrap();
        corpus.save(out.path()).unwrap();
        let again = Corpus::load(out.path()).unwrap();
        assert_eq!(again.databases(), corpus.databases());
        assert_eq!(again.samples(), corpus.samples());
    }

    #[test]
    fn rejects_unknown_db() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), DATABASES_FILE, DBS);
        write(
            dir.path(),
            SAMPLES_FILE,
            r#"[{"question_id": "q1", "text": "x?", "gold_db_id": "nope"}]"#,
        );
        assert!(matches!(Corpus::load(dir.path()), Err(SchemaError::UnknownDb { .. })));
    }

    #[test]
    fn rejects_unknown_statement_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), DATABASES_FILE, DBS);
        write(
            dir.path(),
            SAMPLES_FILE,
            r#"[{"question_id": "q1", "text": "x?", "gold_db_id": "music", "evidence_ids": ["zz"]}]"#,
        );
        assert!(matches!(Corpus::load(dir.path()), Err(SchemaError::UnknownStatement { .. })));
        write(
            dir.path(),
            SAMPLES_FILE,
            r#"[{"question_id": "q1", "text": "x?", "gold_db_id": "music"},
                {"question_id": "q1", "text": "y?", "gold_db_id": "music"}]"#,
        );
        assert!(matches!(Corpus::load(dir.path()), Err(SchemaError::DuplicateQuestion(_))));
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = Corpus::load(dir.path()).unwrap_err();
        assert!(matches!(err, SchemaError::Io { .. }));
        assert!(err.to_string().contains(DATABASES_FILE));
    }
}
