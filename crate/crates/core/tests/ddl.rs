use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

use dbrouter_core::schema::{
    db_text, parse_ddl, render_ddl, render_table, ColumnDef, DataType, DatabaseSchema, TableSchema,
};

const REFERENCE: &str = "CREATE TABLE perpetrator (
'perpetrator id' INTEGER PRIMARY KEY,
'people id' INTEGER FOREIGN KEY,
date TEXT,
year INTEGER,
location TEXT,
country TEXT,
killed INTEGER,
injured INTEGER,
);
CREATE TABLE people (
'people id' INTEGER PRIMARY KEY,
name TEXT,
height INTEGER,
weight INTEGER,
'home town' TEXT,
);";

fn perpetrator_db() -> DatabaseSchema {
    let col = |n: &str, t: DataType| ColumnDef::new(n, t);
    let perpetrator = TableSchema::new(
        "perpetrator",
        vec![
            col("perpetrator id", DataType::Integer).primary_key(),
            col("people id", DataType::Integer).foreign_key(),
            col("date", DataType::Text),
            col("year", DataType::Integer),
            col("location", DataType::Text),
            col("country", DataType::Text),
            col("killed", DataType::Integer),
            col("injured", DataType::Integer),
        ],
    )
    .unwrap();
    let people = TableSchema::new(
        "people",
        vec![
            col("people id", DataType::Integer).primary_key(),
            col("name", DataType::Text),
            col("height", DataType::Integer),
            col("weight", DataType::Integer),
            col("home town", DataType::Text),
        ],
    )
    .unwrap();
    DatabaseSchema::new("perpetrator", vec![perpetrator, people]).unwrap()
}

#[test]
fn reference_blocks_are_byte_exact() {
    assert_eq!(render_ddl(&perpetrator_db()), REFERENCE);
}

#[test]
fn reference_text_parses_back() {
    let db = parse_ddl("perpetrator", REFERENCE).unwrap();
    assert_eq!(db.tables().len(), 2);
    assert_eq!(db.tables()[0].columns().len(), 8);
    assert_eq!(db.tables()[1].columns().len(), 5);
    assert_eq!(db, perpetrator_db());
}

#[test]
fn minimal_table() {
    let t = TableSchema::new("t", vec![ColumnDef::new("x", DataType::Integer)]).unwrap();
    assert_eq!(render_table(&t), "CREATE TABLE t (\nx INTEGER,\n);");
}

#[test]
fn db_text_prefixes_the_name() {
    let db = perpetrator_db();
    assert_eq!(db_text(&db), format!("perpetrator\n{REFERENCE}"));
}

#[test]
fn round_trip_random_schemas() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..200 {
        let db = common::database(&mut rng, &format!("db{i}"), 5);
        let text = render_ddl(&db);
        let back = parse_ddl(db.db_id(), &text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        assert_eq!(back, db, "{text}");
        assert_eq!(render_ddl(&back), text);
    }
}

#[test]
fn quotes_inside_names_survive() {
    let t = TableSchema::new("owner's pets", vec![ColumnDef::new("pet's name", DataType::Other("BLOB".into()))]).unwrap();
    let db = DatabaseSchema::new("d", vec![t]).unwrap();
    assert_eq!(parse_ddl("d", &render_ddl(&db)).unwrap(), db);
}

#[test]
fn malformed_text_is_rejected() {
    assert!(parse_ddl("d", "").is_err());
    let err = parse_ddl("d", "CREATE TABLE a (\nx INTEGER,\n").unwrap_err().to_string();
    assert!(err.contains("line"), "{err}");
    assert!(parse_ddl("d", "CREATE TABLE a (\nx TEXT,\n);\nCREATE TABLE a (\ny TEXT,\n);").is_err());
}
