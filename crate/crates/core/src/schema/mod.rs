//! Database schema data model and its canonical DDL text form.
//!
//! A [`DatabaseSchema`] is the unit the router ranks. It is rendered to text
//! in a small `CREATE TABLE` dialect (see [`ddl`]) and that text is what gets
//! embedded, placed into LLM prompts and paired with questions for training.

pub mod corpus;
pub mod ddl;
mod convert;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use corpus::{Corpus, ManifestDatabase, ManifestSample};
pub use ddl::{db_text, db_text_with, parse_ddl, render_ddl, render_table, render_tables, table_text, table_text_with_statements, DbNameStyle};

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("column name must not be empty (table `{table}`)")]
    EmptyColumnName { table: String },
    #[error("table name must not be empty")]
    EmptyTableName,
    #[error("table `{0}` has no columns")]
    NoColumns(String),
    #[error("duplicate column `{column}` in table `{table}`")]
    DuplicateColumn { table: String, column: String },
    #[error("database id must not be empty")]
    EmptyDbId,
    #[error("database `{0}` has no tables")]
    NoTables(String),
    #[error("duplicate table `{table}` in database `{db_id}`")]
    DuplicateTable { db_id: String, table: String },
    #[error("duplicate statement id `{id}` in database `{db_id}`")]
    DuplicateStatement { db_id: String, id: String },
    #[error("statement `{0}` has empty text")]
    EmptyStatement(String),
    #[error("ddl parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate database id `{0}`")]
    DuplicateDb(String),
    #[error("duplicate question id `{0}`")]
    DuplicateQuestion(String),
    #[error("question `{0}` has empty text")]
    EmptyQuestion(String),
    #[error("question `{question_id}` references unknown database `{db_id}`")]
    UnknownDb { question_id: String, db_id: String },
    #[error("question `{question_id}` references unknown statement `{statement_id}` in `{db_id}`")]
    UnknownStatement {
        question_id: String,
        db_id: String,
        statement_id: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Convert(String),
}

/// Column data type after normalization of the source spelling.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataType {
    Text,
    Integer,
    Real,
    Date,
    /// Unrecognized type token, kept upper-cased.
    Other(String),
}

impl DataType {
    /// Maps a source type spelling onto the enumeration, case-insensitively.
    ///
    /// A parenthesized size suffix (`VARCHAR(255)`) is ignored. Spider's
    /// `number` maps to `INTEGER`, which is how the reference DDL sample
    /// renders Spider numeric columns.
    pub fn normalize(raw: &str) -> DataType {
        let token = raw.trim();
        let base = token.split('(').next().unwrap_or("").trim().to_ascii_lowercase();
        match base.as_str() {
            "text" | "varchar" | "char" | "nvarchar" | "nchar" | "string" | "clob"
            | "character" => DataType::Text,
            "integer" | "int" | "bigint" | "smallint" | "tinyint" | "mediumint" | "number" => {
                DataType::Integer
            }
            "real" | "float" | "double" | "decimal" | "numeric" => DataType::Real,
            "date" | "datetime" | "timestamp" | "time" => DataType::Date,
            _ => DataType::Other(token.to_ascii_uppercase()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            DataType::Text => "TEXT",
            DataType::Integer => "INTEGER",
            DataType::Real => "REAL",
            DataType::Date => "DATE",
            DataType::Other(s) => s,
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for DataType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DataType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(DataType::normalize(&raw))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ColumnDef {
    pub name: String,
    pub data_type: DataType,
    pub is_primary_key: bool,
    pub is_foreign_key: bool,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, data_type: DataType) -> Self {
        ColumnDef {
            name: name.into(),
            data_type,
            is_primary_key: false,
            is_foreign_key: false,
        }
    }

    pub fn primary_key(mut self) -> Self {
        self.is_primary_key = true;
        self
    }

    pub fn foreign_key(mut self) -> Self {
        self.is_foreign_key = true;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TableSchema {
    name: String,
    columns: Vec<ColumnDef>,
}

impl TableSchema {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnDef>) -> Result<Self, SchemaError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(SchemaError::EmptyTableName);
        }
        if columns.is_empty() {
            return Err(SchemaError::NoColumns(name));
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if c.name.trim().is_empty() {
                return Err(SchemaError::EmptyColumnName { table: name });
            }
            if !seen.insert(c.name.as_str()) {
                return Err(SchemaError::DuplicateColumn {
                    table: name.clone(),
                    column: c.name.clone(),
                });
            }
        }
        Ok(TableSchema { name, columns })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[ColumnDef] {
        &self.columns
    }
}

/// One sentence of database-level domain knowledge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainStatement {
    pub id: String,
    pub text: String,
}

impl DomainStatement {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        DomainStatement {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatabaseSchema {
    db_id: String,
    tables: Vec<TableSchema>,
    metadata: Vec<DomainStatement>,
    cluster_id: Option<String>,
}

impl DatabaseSchema {
    pub fn new(db_id: impl Into<String>, tables: Vec<TableSchema>) -> Result<Self, SchemaError> {
        Self::with_metadata(db_id, tables, Vec::new(), None)
    }

    pub fn with_metadata(
        db_id: impl Into<String>,
        tables: Vec<TableSchema>,
        metadata: Vec<DomainStatement>,
        cluster_id: Option<String>,
    ) -> Result<Self, SchemaError> {
        let db_id = db_id.into();
        if db_id.trim().is_empty() {
            return Err(SchemaError::EmptyDbId);
        }
        if tables.is_empty() {
            return Err(SchemaError::NoTables(db_id));
        }
        let mut names = BTreeSet::new();
        for t in &tables {
            if !names.insert(t.name()) {
                return Err(SchemaError::DuplicateTable {
                    db_id,
                    table: t.name().to_string(),
                });
            }
        }
        let mut ids = BTreeSet::new();
        for s in &metadata {
            if s.text.trim().is_empty() {
                return Err(SchemaError::EmptyStatement(s.id.clone()));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(SchemaError::DuplicateStatement {
                    db_id,
                    id: s.id.clone(),
                });
            }
        }
        Ok(DatabaseSchema {
            db_id,
            tables,
            metadata,
            cluster_id,
        })
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn tables(&self) -> &[TableSchema] {
        &self.tables
    }

    pub fn metadata(&self) -> &[DomainStatement] {
        &self.metadata
    }

    pub fn cluster_id(&self) -> Option<&str> {
        self.cluster_id.as_deref()
    }

    pub fn set_cluster_id(&mut self, cluster: Option<String>) {
        self.cluster_id = cluster;
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Case-insensitive table lookup, used when matching SQL identifiers.
    pub fn table_ignore_case(&self, name: &str) -> Option<&TableSchema> {
        self.table(name)
            .or_else(|| self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name)))
    }

    pub fn statement(&self, id: &str) -> Option<&DomainStatement> {
        self.metadata.iter().find(|s| s.id == id)
    }
}
