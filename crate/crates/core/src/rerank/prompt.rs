//! Prompt construction, budget fitting and reply parsing.

use super::RerankError;
use crate::schema::{render_tables, DatabaseSchema, TableSchema};

const PREAMBLE: &str = "You are a database administrator and have designed the following databases whose names and corresponding schema is given as:";

const INSTRUCTIONS: &str = "Your task is to find the names of the 3 most relevant databases to answer the given question correctly. Your response must contain 3 relevant database names in descending order of relevance in the given format: <database 1,database 2,database 3>. The first database must be most relevant to the question. Only provide the 3 database names and not any explanation.";

/// One shortlisted database with the tables shown to the model, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct RerankCandidate {
    pub db_id: String,
    pub tables: Vec<TableSchema>,
}

impl RerankCandidate {
    /// Candidate restricted to `table_names` (unknown names skipped); falls
    /// back to the first table when none match.
    pub fn new<S: AsRef<str>>(db: &DatabaseSchema, table_names: &[S]) -> Self {
        let mut tables: Vec<TableSchema> = Vec::new();
        for n in table_names {
            if let Some(t) = db.table(n.as_ref()) {
                if !tables.iter().any(|x| x.name() == t.name()) {
                    tables.push(t.clone());
                }
            }
        }
        if tables.is_empty() {
            tables.push(db.tables()[0].clone());
        }
        RerankCandidate {
            db_id: db.db_id().to_string(),
            tables,
        }
    }

    pub fn table_names(&self) -> Vec<&str> {
        self.tables.iter().map(TableSchema::name).collect()
    }

    pub fn rendered(&self) -> String {
        render_tables(&self.tables)
    }
}

/// The re-ranking prompt. No trailing newline.
pub fn build_prompt(question: &str, candidates: &[RerankCandidate]) -> String {
    let mut p = String::new();
    p.push_str(PREAMBLE);
    p.push('\n');
    for (i, c) in candidates.iter().enumerate() {
        p.push_str(&format!("Database {}: {}\n", i + 1, c.db_id));
        p.push_str(&format!("Database schema: {}\n", c.rendered()));
    }
    p.push('\n');
    p.push_str(INSTRUCTIONS);
    p.push('\n');
    p.push_str(&format!("Question: {question}\n"));
    p.push_str("Top-3 Ranked Databases:");
    p
}

/// Proxy token count: characters / 4, rounded up.
pub fn prompt_tokens(prompt: &str) -> usize {
    prompt.chars().count().div_ceil(4)
}

/// Shrinks the candidate set until the prompt fits `max_tokens`. Tables are
/// removed first, starting from the last candidate and moving towards the
/// first, until every candidate shows one table; then whole candidates are
/// dropped from the tail. The first candidate and its best table always stay.
pub fn fit_to_budget(
    question: &str,
    candidates: &[RerankCandidate],
    max_tokens: usize,
) -> Result<Vec<RerankCandidate>, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::NoCandidates);
    }
    let mut cs = candidates.to_vec();
    loop {
        let tokens = prompt_tokens(&build_prompt(question, &cs));
        if tokens <= max_tokens {
            return Ok(cs);
        }
        if let Some(c) = cs.iter_mut().rev().find(|c| c.tables.len() > 1) {
            c.tables.pop();
        } else if cs.len() > 1 {
            cs.pop();
        } else {
            return Err(RerankError::Budget { needed: tokens, max_tokens });
        }
    }
}

fn clean(raw: &str) -> &str {
    let t = raw.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '.' | '[' | ']'));
    // Leading enumeration such as "1." or "2)".
    let t = t.trim_start_matches(|c: char| c.is_ascii_digit());
    let t = t.strip_prefix('.').or_else(|| t.strip_prefix(')')).unwrap_or(t);
    t.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*'))
}

fn resolve<'a>(name: &str, shortlist: &'a [String]) -> Option<&'a String> {
    if name.is_empty() {
        return None;
    }
    if let Some(s) = shortlist.iter().find(|s| s.as_str() == name) {
        return Some(s);
    }
    let lower = name.to_lowercase();
    let ci: Vec<&String> = shortlist.iter().filter(|s| s.to_lowercase() == lower).collect();
    if ci.len() == 1 {
        return Some(ci[0]);
    }
    let sub: Vec<&String> = shortlist
        .iter()
        .filter(|s| {
            let s = s.to_lowercase();
            s.contains(&lower) || lower.contains(&s)
        })
        .collect();
    (sub.len() == 1).then(|| sub[0])
}

/// Reads up to three database ids from a model reply. Names are taken from
/// `<...>` groups (the whole reply when there are none), resolved against the
/// shortlist, de-duplicated and padded from the shortlist order.
pub fn parse_ranking(response: &str, shortlist: &[String]) -> Result<Vec<String>, RerankError> {
    if shortlist.is_empty() {
        return Err(RerankError::NoCandidates);
    }
    let mut groups: Vec<&str> = Vec::new();
    let mut rest = response;
    while let Some(open) = rest.find('<') {
        let Some(close) = rest[open..].find('>') else { break };
        groups.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    if groups.is_empty() {
        groups.push(response);
    }
    let want = 3.min(shortlist.len());
    let mut out: Vec<String> = Vec::new();
    for g in groups {
        for raw in g.split([',', '\n', ';']) {
            if let Some(id) = resolve(clean(raw), shortlist) {
                if !out.contains(id) {
                    out.push(id.clone());
                }
            }
        }
    }
    if out.is_empty() {
        return Err(RerankError::Unparseable(response.to_string()));
    }
    out.truncate(want);
    for s in shortlist {
        if out.len() >= want {
            break;
        }
        if !out.contains(s) {
            out.push(s.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnDef, DataType};

    fn db(id: &str, tables: &[&str]) -> DatabaseSchema {
        let ts = tables
            .iter()
            .map(|t| TableSchema::new(*t, vec![ColumnDef::new("id", DataType::Integer).primary_key()]).unwrap())
            .collect();
        DatabaseSchema::new(id, ts).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn prompt_lists_candidates_in_order() {
        let c = [RerankCandidate::new(&db("b", &["x"]), &["x"]), RerankCandidate::new(&db("a", &["y"]), &["y"])];
        let p = build_prompt("Q?", &c);
        assert!(p.starts_with(PREAMBLE));
        assert!(p.find("Database 1: b").unwrap() < p.find("Database 2: a").unwrap());
        assert!(p.ends_with("Question: Q?\nTop-3 Ranked Databases:"));
        let one = build_prompt("Q?", &c[..1]);
        assert!(one.contains("3 most relevant databases"));
    }

    #[test]
    fn budget_strips_tail_tables_first() {
        let cands: Vec<_> = (0..3)
            .map(|i| RerankCandidate::new(&db(&format!("d{i}"), &["t1", "t2", "t3"]), &["t1", "t2", "t3"]))
            .collect();
        let full = prompt_tokens(&build_prompt("q", &cands));
        let fitted = fit_to_budget("q", &cands, full).unwrap();
        assert_eq!(fitted, cands);
        let fitted = fit_to_budget("q", &cands, full - 1).unwrap();
        assert_eq!(fitted[2].table_names(), vec!["t1", "t2"]);
        assert_eq!(fitted[0].tables.len(), 3);
        let minimal = vec![RerankCandidate {
            db_id: "d0".into(),
            tables: vec![cands[0].tables[0].clone()],
        }];
        let min_tokens = prompt_tokens(&build_prompt("q", &minimal));
        assert_eq!(fit_to_budget("q", &cands, min_tokens).unwrap(), minimal);
        assert!(matches!(fit_to_budget("q", &cands, min_tokens - 1), Err(RerankError::Budget { .. })));
    }

    #[test]
    fn parse_bracket_and_prose() {
        let sl = ids(&["flight_2", "aircraft", "pilot_record", "flight_1"]);
        let want = ids(&["flight_2", "aircraft", "pilot_record"]);
        assert_eq!(parse_ranking("<flight_2,aircraft,pilot_record>", &sl).unwrap(), want);
        assert_eq!(parse_ranking("Sure! The answer is <flight_2, aircraft, pilot_record>. Hope it helps.", &sl).unwrap(), want);
        assert_eq!(parse_ranking("<pilot_record,pilot_record>", &sl).unwrap(), ids(&["pilot_record", "flight_2", "aircraft"]));
        assert_eq!(parse_ranking("<FLIGHT_2,Aircraft,pilot>", &sl).unwrap(), want);
        assert!(matches!(parse_ranking("no idea", &sl), Err(RerankError::Unparseable(_))));
        assert_eq!(parse_ranking("<a_b>", &ids(&["a_b"])).unwrap(), ids(&["a_b"]));
    }
}
