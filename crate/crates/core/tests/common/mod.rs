#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;

use dbrouter_core::schema::{ColumnDef, DataType, DatabaseSchema, TableSchema};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

const WORDS: &[&str] = &[
    "id", "name", "age", "city", "country", "year", "price", "title", "date", "rank", "score", "owner", "home", "town",
    "open", "kind", "total", "amount", "code", "level",
];

/// Identifier of one to three words; multi-word names contain spaces.
pub fn ident(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(if rng.random_bool(0.5) { " " } else { "_" })
}

pub fn data_type(rng: &mut impl Rng) -> DataType {
    [DataType::Text, DataType::Integer, DataType::Real, DataType::Date][rng.random_range(0..4)].clone()
}

pub fn table(rng: &mut impl Rng, name: String) -> TableSchema {
    let mut cols: Vec<ColumnDef> = Vec::new();
    let n = rng.random_range(1..=6);
    while cols.len() < n {
        let name = ident(rng);
        if cols.iter().any(|c| c.name == name) {
            continue;
        }
        let mut c = ColumnDef::new(name, data_type(rng));
        if rng.random_bool(0.2) {
            c = c.primary_key();
        }
        if rng.random_bool(0.2) {
            c = c.foreign_key();
        }
        cols.push(c);
    }
    TableSchema::new(name, cols).unwrap()
}

/// Random database with 1..=max_tables uniquely named tables.
pub fn database(rng: &mut impl Rng, db_id: &str, max_tables: usize) -> DatabaseSchema {
    let n = rng.random_range(1..=max_tables);
    let mut tables: Vec<TableSchema> = Vec::new();
    while tables.len() < n {
        let name = ident(rng);
        if tables.iter().any(|t| t.name() == name) {
            continue;
        }
        tables.push(table(rng, name));
    }
    DatabaseSchema::new(db_id, tables).unwrap()
}
