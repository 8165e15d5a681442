//! Rendering and parsing of the `CREATE TABLE` text form.
//!
//! ```text
//! CREATE TABLE perpetrator (
//! 'perpetrator id' INTEGER PRIMARY KEY,
//! 'people id' INTEGER FOREIGN KEY,
//! date TEXT,
//! );
//! ```
//!
//! Multi-word identifiers are wrapped in single quotes (an embedded quote is
//! doubled). Every column line ends with a comma, including the last one.

use std::borrow::Cow;
use std::fmt::Write;

use super::{ColumnDef, DataType, DatabaseSchema, DomainStatement, SchemaError, TableSchema};

/// How the database name is written in front of the DDL script.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DbNameStyle {
    /// The identifier exactly as stored, e.g. `cre_Docs_and_Epenses`.
    #[default]
    Raw,
    /// Underscores replaced by spaces.
    Prettified,
}

fn needs_quotes(name: &str) -> bool {
    name.is_empty()
        || name
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '\'' | ',' | '(' | ')' | ';'))
}

pub(crate) fn quote_ident(name: &str) -> Cow<'_, str> {
    if needs_quotes(name) {
        Cow::Owned(format!("'{}'", name.replace('\'', "''")))
    } else {
        Cow::Borrowed(name)
    }
}

pub fn render_table(table: &TableSchema) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "CREATE TABLE {} (", quote_ident(table.name()));
    for col in table.columns() {
        out.push_str(&quote_ident(&col.name));
        out.push(' ');
        out.push_str(col.data_type.as_str());
        if col.is_primary_key {
            out.push_str(" PRIMARY KEY");
        }
        if col.is_foreign_key {
            out.push_str(" FOREIGN KEY");
        }
        out.push_str(",\n");
    }
    out.push_str(");");
    out
}

/// Renders the given tables as consecutive `CREATE TABLE` blocks.
pub fn render_tables<'a>(tables: impl IntoIterator<Item = &'a TableSchema>) -> String {
    tables
        .into_iter()
        .map(render_table)
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_ddl(db: &DatabaseSchema) -> String {
    render_tables(db.tables())
}

/// Database name on its own line followed by the full DDL script.
pub fn db_text(db: &DatabaseSchema) -> String {
    db_text_with(db, DbNameStyle::Raw)
}

pub fn db_text_with(db: &DatabaseSchema, style: DbNameStyle) -> String {
    let name = match style {
        DbNameStyle::Raw => db.db_id().to_string(),
        DbNameStyle::Prettified => db.db_id().replace('_', " "),
    };
    format!("{name}\n{}", render_ddl(db))
}

/// Domain statements (one per line) followed by the table's DDL block.
pub fn table_text<S: AsRef<str>>(table: &TableSchema, statements: &[S]) -> String {
    let mut out = String::new();
    for s in statements {
        out.push_str(s.as_ref());
        out.push('\n');
    }
    out.push_str(&render_table(table));
    out
}

/// Convenience wrapper of [`table_text`] for statement structs.
pub fn table_text_with_statements(table: &TableSchema, statements: &[&DomainStatement]) -> String {
    let texts: Vec<&str> = statements.iter().map(|s| s.text.as_str()).collect();
    table_text(table, &texts)
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    LParen,
    RParen,
    Comma,
    Semi,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> SchemaError {
    SchemaError::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Spanned>, SchemaError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let (l, col) = (line, column);
        let advance = |c: char, line: &mut usize, column: &mut usize| {
            if c == '\n' {
                *line += 1;
                *column = 1;
            } else {
                *column += 1;
            }
        };
        match c {
            c if c.is_whitespace() => {
                chars.next();
                advance(c, &mut line, &mut column);
            }
            '(' | ')' | ',' | ';' => {
                chars.next();
                advance(c, &mut line, &mut column);
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    _ => Tok::Semi,
                };
                out.push(Spanned { tok, line: l, column: col });
            }
            '\'' => {
                chars.next();
                advance(c, &mut line, &mut column);
                let mut buf = String::new();
                loop {
                    match chars.next() {
                        None => return Err(parse_error(l, col, "unterminated quoted identifier")),
                        Some('\'') => {
                            advance('\'', &mut line, &mut column);
                            if chars.peek() == Some(&'\'') {
                                chars.next();
                                advance('\'', &mut line, &mut column);
                                buf.push('\'');
                            } else {
                                break;
                            }
                        }
                        Some(ch) => {
                            advance(ch, &mut line, &mut column);
                            buf.push(ch);
                        }
                    }
                }
                out.push(Spanned { tok: Tok::Quoted(buf), line: l, column: col });
            }
            _ => {
                let mut buf = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_whitespace() || matches!(ch, '(' | ')' | ',' | ';' | '\'') {
                        break;
                    }
                    buf.push(ch);
                    chars.next();
                    advance(ch, &mut line, &mut column);
                }
                out.push(Spanned { tok: Tok::Word(buf), line: l, column: col });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    eof_line: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Spanned { tok: Tok::Word(w), .. }) if w.eq_ignore_ascii_case(kw))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<Spanned, SchemaError> {
        match self.next() {
            Some(s) if matches!(&s.tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw)) => Ok(s),
            Some(s) => Err(parse_error(s.line, s.column, format!("expected `{kw}`"))),
            None => Err(parse_error(self.eof_line, 1, format!("expected `{kw}`, found end of input"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SchemaError> {
        match self.next() {
            Some(Spanned { tok: Tok::Word(w), .. }) | Some(Spanned { tok: Tok::Quoted(w), .. }) => Ok(w),
            Some(s) => Err(parse_error(s.line, s.column, format!("expected {what}"))),
            None => Err(parse_error(self.eof_line, 1, format!("expected {what}, found end of input"))),
        }
    }

    fn table(&mut self) -> Result<TableSchema, SchemaError> {
        let create = self.expect_keyword("CREATE")?;
        self.expect_keyword("TABLE")?;
        let name = self.ident("table name")?;
        match self.next() {
            Some(Spanned { tok: Tok::LParen, .. }) => {}
            Some(s) => return Err(parse_error(s.line, s.column, "expected `(` after table name")),
            None => return Err(parse_error(create.line, create.column, "expected `(` after table name")),
        }
        let unclosed = || {
            parse_error(
                create.line,
                create.column,
                format!("unmatched `(` in CREATE TABLE {name} opened at line {}", create.line),
            )
        };
        let mut columns = Vec::new();
        loop {
            match self.peek() {
                None => return Err(unclosed()),
                Some(Spanned { tok: Tok::RParen, .. }) => {
                    self.next();
                    break;
                }
                _ => {}
            }
            if self.peek_keyword("CREATE") {
                return Err(unclosed());
            }
            columns.push(self.column()?);
            match self.next() {
                Some(Spanned { tok: Tok::Comma, .. }) => {}
                Some(Spanned { tok: Tok::RParen, .. }) => break,
                Some(s) => return Err(parse_error(s.line, s.column, "expected `,` or `)` after column")),
                None => return Err(unclosed()),
            }
        }
        match self.next() {
            Some(Spanned { tok: Tok::Semi, .. }) => {}
            Some(s) => return Err(parse_error(s.line, s.column, "expected `;` after `)`")),
            None => return Err(parse_error(self.eof_line, 1, "expected `;`, found end of input")),
        }
        TableSchema::new(name, columns)
    }

    fn column(&mut self) -> Result<ColumnDef, SchemaError> {
        let name = self.ident("column name")?;
        let mut ty = match self.next() {
            Some(Spanned { tok: Tok::Word(w), .. }) => w,
            Some(s) => return Err(parse_error(s.line, s.column, "expected column type")),
            None => return Err(parse_error(self.eof_line, 1, "expected column type")),
        };
        // Sized types such as VARCHAR(255).
        if matches!(self.peek(), Some(Spanned { tok: Tok::LParen, .. })) {
            self.next();
            ty.push('(');
            loop {
                match self.next() {
                    Some(Spanned { tok: Tok::RParen, .. }) => break,
                    Some(Spanned { tok: Tok::Word(w), .. }) => ty.push_str(&w),
                    Some(Spanned { tok: Tok::Comma, .. }) => ty.push(','),
                    Some(s) => return Err(parse_error(s.line, s.column, "malformed type arguments")),
                    None => return Err(parse_error(self.eof_line, 1, "unterminated type arguments")),
                }
            }
            ty.push(')');
        }
        let mut col = ColumnDef::new(name, DataType::normalize(&ty));
        loop {
            if self.peek_keyword("PRIMARY") {
                self.next();
                self.expect_keyword("KEY")?;
                col.is_primary_key = true;
            } else if self.peek_keyword("FOREIGN") {
                self.next();
                self.expect_keyword("KEY")?;
                col.is_foreign_key = true;
            } else if self.peek_keyword("NOT") {
                self.next();
                self.expect_keyword("NULL")?;
            } else if self.peek_keyword("UNIQUE") {
                self.next();
            } else {
                break;
            }
        }
        Ok(col)
    }
}

/// Parses a DDL script into a schema named `db_id`.
///
/// Fails on malformed blocks (with line/column), duplicate table names and
/// on scripts containing no table at all.
pub fn parse_ddl(db_id: &str, text: &str) -> Result<DatabaseSchema, SchemaError> {
    let toks = lex(text)?;
    let eof_line = text.lines().count().max(1);
    let mut p = Parser { toks, pos: 0, eof_line };
    let mut tables = Vec::new();
    while p.peek().is_some() {
        tables.push(p.table()?);
    }
    DatabaseSchema::new(db_id, tables)
}
