//! Precomputed repository vectors and their file format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::adapter::LinearAdapter;
use crate::embedding::{Embedder, EmbeddingVector};
use crate::scalar::Scalar;
use crate::schema::{db_text, render_table, Corpus};

const MAGIC: &[u8; 8] = b"DBRIDX01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Granularities {
    pub schema: bool,
    pub tables: bool,
    pub statements: bool,
}

impl Default for Granularities {
    fn default() -> Self {
        Granularities {
            schema: true,
            tables: true,
            statements: true,
        }
    }
}

/// Optional projection per embedding target. Each applies to both the
/// question and the documents of its target.
#[derive(Clone, Debug)]
pub struct AdapterSet<T: Scalar> {
    pub schema: Option<LinearAdapter<T>>,
    pub table: Option<LinearAdapter<T>>,
    pub statement: Option<LinearAdapter<T>>,
}

impl<T: Scalar> Default for AdapterSet<T> {
    fn default() -> Self {
        AdapterSet {
            schema: None,
            table: None,
            statement: None,
        }
    }
}

impl<T: Scalar> AdapterSet<T> {
    pub fn digests(&self) -> BTreeMap<String, String> {
        [("schema", &self.schema), ("table", &self.table), ("statement", &self.statement)]
            .into_iter()
            .filter_map(|(k, a)| a.as_ref().map(|a| (k.to_string(), a.digest())))
            .collect()
    }
}

pub(crate) fn project<T: Scalar>(
    adapter: Option<&LinearAdapter<T>>,
    v: EmbeddingVector<T>,
) -> Result<EmbeddingVector<T>, RetrievalError> {
    match adapter {
        Some(a) => Ok(a.apply(&v)?),
        None => Ok(v),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EntryKind {
    Db,
    Table,
    Statement,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    kind: EntryKind,
    db: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub provider: String,
    pub dim: usize,
    pub granularities: Granularities,
    /// Adapter digest per target (`schema`, `table`, `statement`).
    pub adapters: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FileHeader {
    #[serde(flatten)]
    header: IndexHeader,
    entries: Vec<Entry>,
}

/// Normalized vectors for every database, table and domain statement.
#[derive(Clone, Debug, PartialEq)]
pub struct RepositoryIndex<T: Scalar> {
    header: IndexHeader,
    dbs: BTreeMap<String, Vec<T>>,
    /// Tables in schema order.
    tables: BTreeMap<String, Vec<(String, Vec<T>)>>,
    statements: BTreeMap<String, Vec<(String, Vec<T>)>>,
}

/// Embeds the corpus at the requested granularities, through the matching
/// adapters.
pub fn build_index<T: Scalar>(
    corpus: &Corpus,
    embedder: &Embedder,
    adapters: &AdapterSet<T>,
    granularities: Granularities,
) -> Result<RepositoryIndex<T>, RetrievalError> {
    let embed = |what: &str, texts: &[String]| -> Result<Vec<EmbeddingVector<T>>, RetrievalError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        embedder.embed_batch(texts).map_err(|source| RetrievalError::Embed {
            what: what.to_string(),
            source,
        })
    };
    let mut index = RepositoryIndex {
        header: IndexHeader {
            provider: embedder.identity().to_string(),
            dim: 0,
            granularities,
            adapters: adapters.digests(),
        },
        dbs: BTreeMap::new(),
        tables: BTreeMap::new(),
        statements: BTreeMap::new(),
    };
    let dbs = corpus.databases();
    if dbs.is_empty() {
        return Err(RetrievalError::EmptyRepository);
    }
    if granularities.schema {
        let texts: Vec<String> = dbs.iter().map(db_text).collect();
        for (db, v) in dbs.iter().zip(embed("database schemas", &texts)?) {
            let v = project(adapters.schema.as_ref(), v)?;
            index.dbs.insert(db.db_id().to_string(), v.into_values());
        }
    }
    if granularities.tables {
        for db in dbs {
            let texts: Vec<String> = db.tables().iter().map(render_table).collect();
            let vs = embed(&format!("tables of `{}`", db.db_id()), &texts)?;
            let mut out = Vec::new();
            for (t, v) in db.tables().iter().zip(vs) {
                out.push((t.name().to_string(), project(adapters.table.as_ref(), v)?.into_values()));
            }
            index.tables.insert(db.db_id().to_string(), out);
        }
    }
    if granularities.statements {
        for db in dbs {
            let texts: Vec<String> = db.metadata().iter().map(|s| s.text.clone()).collect();
            let vs = embed(&format!("statements of `{}`", db.db_id()), &texts)?;
            let mut out = Vec::new();
            for (s, v) in db.metadata().iter().zip(vs) {
                out.push((s.id.clone(), project(adapters.statement.as_ref(), v)?.into_values()));
            }
            index.statements.insert(db.db_id().to_string(), out);
        }
    }
    let dim = index.all_vectors().first().map_or(0, |(_, v)| v.len());
    index.header.dim = dim;
    Ok(index)
}

impl<T: Scalar> RepositoryIndex<T> {
    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn provider(&self) -> &str {
        &self.header.provider
    }

    pub fn db_ids(&self) -> impl Iterator<Item = &str> {
        let mut ids: Vec<&str> = self
            .dbs
            .keys()
            .chain(self.tables.keys())
            .map(String::as_str)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
    }

    pub fn db_vector(&self, db: &str) -> Option<&[T]> {
        self.dbs.get(db).map(Vec::as_slice)
    }

    pub fn table_vectors(&self, db: &str) -> Option<&[(String, Vec<T>)]> {
        self.tables.get(db).map(Vec::as_slice)
    }

    pub fn statement_vectors(&self, db: &str) -> Option<&[(String, Vec<T>)]> {
        self.statements.get(db).map(Vec::as_slice)
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.dbs.len(),
            self.tables.values().map(Vec::len).sum(),
            self.statements.values().map(Vec::len).sum(),
        )
    }

    fn all_vectors(&self) -> Vec<(Entry, &Vec<T>)> {
        let entry = |kind, db: &String, name: &String| Entry {
            kind,
            db: db.clone(),
            name: name.clone(),
        };
        let mut out: Vec<(Entry, &Vec<T>)> = Vec::new();
        for (d, v) in &self.dbs {
            out.push((entry(EntryKind::Db, d, &String::new()), v));
        }
        for (d, items) in &self.tables {
            out.extend(items.iter().map(|(n, v)| (entry(EntryKind::Table, d, n), v)));
        }
        for (d, items) in &self.statements {
            out.extend(items.iter().map(|(n, v)| (entry(EntryKind::Statement, d, n), v)));
        }
        out
    }

    /// Serialized form: magic, u32 header length, JSON header, then every
    /// vector as little-endian f32 in header order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (entries, vectors): (Vec<Entry>, Vec<&Vec<T>>) = self.all_vectors().into_iter().unzip();
        let json = serde_json::to_vec(&FileHeader {
            header: self.header.clone(),
            entries,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + vectors.len() * self.header.dim * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in vectors {
            for x in v {
                out.extend_from_slice(&x.as_f32().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err("not an index file".into());
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let raw = bytes.get(12..12 + hlen).ok_or("truncated header")?;
        let fh: FileHeader = serde_json::from_slice(raw).map_err(|e| e.to_string())?;
        let dim = fh.header.dim;
        let payload = &bytes[12 + hlen..];
        if payload.len() != fh.entries.len() * dim * 4 {
            return Err(format!(
                "payload holds {} bytes, expected {} vectors of dimension {dim}",
                payload.len(),
                fh.entries.len()
            ));
        }
        let mut index = RepositoryIndex {
            header: fh.header,
            dbs: BTreeMap::new(),
            tables: BTreeMap::new(),
            statements: BTreeMap::new(),
        };
        for (e, chunk) in fh.entries.into_iter().zip(payload.chunks_exact(dim.max(1) * 4)) {
            let v: Vec<T> = chunk
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect();
            match e.kind {
                EntryKind::Db => {
                    index.dbs.insert(e.db, v);
                }
                EntryKind::Table => index.tables.entry(e.db).or_default().push((e.name, v)),
                EntryKind::Statement => index.statements.entry(e.db).or_default().push((e.name, v)),
            }
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| file_err(path, e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| file_err(path, e.to_string()))?;
        Self::from_bytes(&bytes).map_err(|m| file_err(path, m))
    }

    /// Checks that the index was built with this provider and these adapters.
    pub fn check_compatible(&self, provider: &str, adapters: &AdapterSet<T>) -> Result<(), RetrievalError> {
        if self.header.provider != provider {
            return Err(RetrievalError::Mismatch(format!(
                "index built with provider `{}`, router uses `{provider}`",
                self.header.provider
            )));
        }
        if self.header.adapters != adapters.digests() {
            return Err(RetrievalError::Mismatch("adapter digests differ from the index".into()));
        }
        Ok(())
    }
}

fn file_err(path: &Path, message: String) -> RetrievalError {
    RetrievalError::File {
        path: path.display().to_string(),
        message,
    }
}
