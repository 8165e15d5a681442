//! Table references of a SQLite-dialect query.
//!
//! A lightweight scanner rather than a full parser: it tokenizes the query and
//! collects every table named in a `FROM` list or after `JOIN`, at any nesting
//! depth, including both sides of set operations. Aliases are dropped and
//! names are lower-cased.

use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Quoted(String),
    Str,
    Num,
    Punct(char),
}

const NOT_ALIAS: &[&str] = &[
    "where", "group", "order", "limit", "join", "inner", "left", "right", "full", "outer", "cross",
    "natural", "on", "using", "union", "intersect", "except", "having", "as", "select", "from",
    "window", "offset", "and", "or", "not", "in", "when", "then", "else", "end", "asc", "desc",
    "case", "is", "like", "between", "exists",
];

fn tokenize(sql: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if matches!(c, '\'' | '"' | '`' | '[') {
            let close = if c == '[' { ']' } else { c };
            let start = i;
            i += 1;
            let mut buf = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(format!("unterminated quote starting at character {start}")),
                    Some(&ch) if ch == close => {
                        if close != ']' && chars.get(i + 1) == Some(&close) {
                            buf.push(close);
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(&ch) => {
                        buf.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(if c == '\'' { Tok::Str } else { Tok::Quoted(buf) });
        } else if c.is_ascii_digit() {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
                i += 1;
            }
            out.push(Tok::Num);
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            out.push(Tok::Punct(c));
            i += 1;
        }
    }
    Ok(out)
}

fn is_kw(t: Option<&Tok>, kw: &str) -> bool {
    matches!(t, Some(Tok::Ident(w)) if w.eq_ignore_ascii_case(kw))
}

struct Scanner<'a> {
    toks: &'a [Tok],
    tables: BTreeSet<String>,
}

impl Scanner<'_> {
    fn matching(&self, open: usize, end: usize) -> Result<usize, String> {
        let mut depth = 0usize;
        for j in open..end {
            match self.toks[j] {
                Tok::Punct('(') => depth += 1,
                Tok::Punct(')') => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(j);
                    }
                }
                _ => {}
            }
        }
        Err("unbalanced parentheses".into())
    }

    /// Scans `toks[start..end]`, a region with balanced parentheses.
    fn scan(&mut self, start: usize, end: usize) -> Result<(), String> {
        // Whether a SELECT opened at each parenthesis depth; FROM inside
        // function calls such as `EXTRACT(YEAR FROM d)` is not a table list.
        let mut in_select = vec![false];
        let mut i = start;
        while i < end {
            let t = &self.toks[i];
            match t {
                Tok::Punct('(') => {
                    in_select.push(false);
                    i += 1;
                }
                Tok::Punct(')') => {
                    if in_select.len() == 1 {
                        return Err("unbalanced parentheses".into());
                    }
                    in_select.pop();
                    i += 1;
                }
                Tok::Ident(w) if w.eq_ignore_ascii_case("select") || w.eq_ignore_ascii_case("delete") => {
                    *in_select.last_mut().unwrap() = true;
                    i += 1;
                }
                Tok::Ident(w) if w.eq_ignore_ascii_case("from") && *in_select.last().unwrap() => {
                    i = self.table_list(i + 1, end)?;
                }
                Tok::Ident(w) if w.eq_ignore_ascii_case("join") => {
                    i = self.table_ref(i + 1, end)?;
                }
                _ => i += 1,
            }
        }
        if in_select.len() != 1 {
            return Err("unbalanced parentheses".into());
        }
        Ok(())
    }

    fn table_list(&mut self, mut j: usize, end: usize) -> Result<usize, String> {
        loop {
            j = self.table_ref(j, end)?;
            if matches!(self.toks.get(j), Some(Tok::Punct(','))) && j < end {
                j += 1;
            } else {
                return Ok(j);
            }
        }
    }

    fn table_ref(&mut self, mut j: usize, end: usize) -> Result<usize, String> {
        match self.toks.get(j).filter(|_| j < end) {
            Some(Tok::Punct('(')) => {
                let close = self.matching(j, end)?;
                self.scan(j + 1, close)?;
                j = close + 1;
            }
            Some(Tok::Ident(name)) | Some(Tok::Quoted(name)) => {
                let mut name = name.clone();
                j += 1;
                while matches!(self.toks.get(j), Some(Tok::Punct('.'))) {
                    match self.toks.get(j + 1) {
                        Some(Tok::Ident(n)) | Some(Tok::Quoted(n)) => {
                            name = n.clone();
                            j += 2;
                        }
                        _ => return Err(format!("dangling `.` after `{name}`")),
                    }
                }
                self.tables.insert(name.to_lowercase());
            }
            Some(other) => return Err(format!("expected a table reference, found {other:?}")),
            None => return Err("expected a table reference, found end of query".into()),
        }
        if is_kw(self.toks.get(j), "as") {
            j += 1;
            match self.toks.get(j) {
                Some(Tok::Ident(_)) | Some(Tok::Quoted(_)) => j += 1,
                _ => return Err("expected alias after AS".into()),
            }
        } else if let Some(Tok::Ident(w)) | Some(Tok::Quoted(w)) = self.toks.get(j) {
            if j < end && !NOT_ALIAS.contains(&w.to_ascii_lowercase().as_str()) {
                j += 1;
            }
        }
        Ok(j)
    }
}

/// Collects all table names referenced in `FROM` / `JOIN` clauses, lower-cased.
pub fn extract_tables_from_sql(sql: &str) -> Result<BTreeSet<String>, String> {
    if sql.trim().is_empty() {
        return Err("empty query".into());
    }
    let toks = tokenize(sql)?;
    let mut s = Scanner {
        toks: &toks,
        tables: BTreeSet::new(),
    };
    s.scan(0, toks.len())?;
    Ok(s.tables)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_from() {
        assert_eq!(extract_tables_from_sql("SELECT name FROM people").unwrap(), set(&["people"]));
    }

    #[test]
    fn join() {
        assert_eq!(
            extract_tables_from_sql("SELECT * FROM a JOIN b ON a.x=b.x").unwrap(),
            set(&["a", "b"])
        );
    }

    #[test]
    fn derived_table_and_comma_list() {
        assert_eq!(
            extract_tables_from_sql("SELECT * FROM (SELECT * FROM t1) s, t2 AS z").unwrap(),
            set(&["t1", "t2"])
        );
    }

    #[test]
    fn spider_style_queries() {
        let cases: &[(&str, &[&str])] = &[
            ("SELECT count(*) FROM singer", &["singer"]),
            (
                "SELECT T2.name FROM singer_in_concert AS T1 JOIN singer AS T2 ON T1.singer_id = T2.singer_id WHERE T1.concert_id IN (SELECT concert_id FROM concert WHERE YEAR = 2014)",
                &["singer_in_concert", "singer", "concert"],
            ),
            (
                "SELECT name FROM stadium EXCEPT SELECT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id WHERE T1.year = 2014",
                &["stadium", "concert"],
            ),
            (
                "SELECT country FROM singer WHERE age > 40 INTERSECT SELECT country FROM singer WHERE age < 30",
                &["singer"],
            ),
            (
                "SELECT DISTINCT T1.Fname FROM Student AS T1 JOIN Has_Pet AS T2 ON T1.stuid = T2.stuid UNION SELECT Fname FROM Pets WHERE PetType = \"dog\"",
                &["student", "has_pet", "pets"],
            ),
            (
                "SELECT T1.`School Name` FROM `frpm` AS T1 INNER JOIN satscores AS T2 ON T1.CDSCode = T2.cds WHERE T2.NumTstTakr > 500",
                &["frpm", "satscores"],
            ),
            ("SELECT CAST(SUM(IIF(a = 'x', 1, 0)) AS REAL) * 100 / COUNT(*) FROM `Match`", &["match"]),
            ("SELECT strftime('%Y', d) FROM main.events e LEFT OUTER JOIN [Order Details] od ON e.id = od.id", &["events", "order details"]),
            ("SELECT EXTRACT(YEAR FROM birth) FROM people", &["people"]),
            ("SELECT 1", &[]),
        ];
        for (sql, want) in cases {
            assert_eq!(extract_tables_from_sql(sql).unwrap(), set(want), "{sql}");
        }
    }

    #[test]
    fn malformed_queries() {
        assert!(extract_tables_from_sql("").is_err());
        assert!(extract_tables_from_sql("SELECT * FROM").is_err());
        assert!(extract_tables_from_sql("SELECT * FROM (SELECT 1 FROM t").is_err());
        assert!(extract_tables_from_sql("SELECT 'open FROM t").is_err());
        assert!(extract_tables_from_sql("SELECT a) FROM t").is_err());
    }
}
