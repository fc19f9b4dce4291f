//! Desk-scale table store with a restricted single-table query language.
//!
//! ```text
//! SELECT <col | COUNT | AVG(col) | MIN(col) | MAX(col)> FROM <table>
//!     [WHERE <col> = <literal> [AND <col> = <literal>]*] [;]
//! ```
//!
//! Literals are single-quoted strings (`''` escapes a quote) or numbers.
//! Numeric literals compare numerically against cells; strings compare
//! exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

use super::calculator::format_number;
use crate::backend::{Backend, GenerationRequest, Role};
use crate::memory::tokenize;
use crate::model::Observation;
use crate::prompts;

pub const MAX_QUERY_ATTEMPTS: usize = 3;
pub const MAX_RESULT_ROWS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("query syntax error: {0}")]
    Syntax(String),
    #[error("query execution error: {0}")]
    Execution(String),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("table store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("table store csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("table store format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, StoreError> {
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(StoreError::Format(format!(
                "row {i} has {} cells, expected {}",
                row.len(),
                columns.len()
            )));
        }
        Ok(Self { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.eq_ignore_ascii_case(name))
    }
}

/// Tables plus per-column documentation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableStore {
    pub tables: IndexMap<String, Table>,
    pub docs: BTreeMap<String, BTreeMap<String, String>>,
}

impl TableStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, table: Table) {
        self.tables.insert(name.into(), table);
    }

    pub fn describe(&mut self, table: &str, column: &str, text: &str) {
        self.docs
            .entry(table.to_string())
            .or_default()
            .insert(column.to_string(), text.to_string());
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, t)| t)
    }

    /// Loads every `*.csv` in `dir` (file stem = table name, first row =
    /// header) and the optional `manual.json` of column descriptions.
    pub fn load_dir(dir: &Path) -> Result<Self, StoreError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        let mut store = Self::new();
        for path in paths {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| StoreError::Format(format!("bad table file {}", path.display())))?
                .to_string();
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(&path)?;
            let columns: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
            let mut rows = Vec::new();
            for record in reader.records() {
                rows.push(record?.iter().map(str::to_string).collect());
            }
            let table = Table::new(columns, rows)
                .map_err(|e| StoreError::Format(format!("{name}: {e}")))?;
            store.insert(name, table);
        }
        let manual = dir.join("manual.json");
        if manual.exists() {
            let text = fs::read_to_string(&manual)?;
            store.docs = serde_json::from_str(&text)
                .map_err(|e| StoreError::Format(format!("manual.json: {e}")))?;
        }
        Ok(store)
    }

    /// Table names and columns, as shown to the query translator.
    pub fn schema_text(&self) -> String {
        self.tables
            .iter()
            .map(|(name, t)| format!("{name}({})", t.columns.join(", ")))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Column(String),
    Count,
    Avg(String),
    Min(String),
    Max(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Text(String),
    Number(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub projection: Projection,
    pub table: String,
    pub filters: Vec<(String, Literal)>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Num(f64),
    Sym(char),
}

fn lex_query(text: &str) -> Result<Vec<Tok>, QueryError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(QueryError::Syntax("unterminated string literal".into())),
                    Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some('\'') => {
                        i += 1;
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(Tok::Str(s));
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || *n == '.')) || c == '.' {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let n = s
                .parse()
                .map_err(|_| QueryError::Syntax(format!("bad number {s:?}")))?;
            out.push(Tok::Num(n));
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Word(chars[start..i].iter().collect()));
        } else if matches!(c, '(' | ')' | '=' | ';' | '*') {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(QueryError::Syntax(format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

struct QueryParser {
    toks: Vec<Tok>,
    pos: usize,
}

impl QueryParser {
    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        match self.next() {
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw) => Ok(()),
            other => Err(QueryError::Syntax(format!("expected {kw}, found {}", describe(other.as_ref())))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        match self.next() {
            Some(Tok::Word(w)) => Ok(w),
            other => Err(QueryError::Syntax(format!("expected {what}, found {}", describe(other.as_ref())))),
        }
    }

    fn sym(&mut self, c: char) -> Result<(), QueryError> {
        match self.next() {
            Some(Tok::Sym(s)) if s == c => Ok(()),
            other => Err(QueryError::Syntax(format!("expected '{c}', found {}", describe(other.as_ref())))),
        }
    }

    fn projection(&mut self) -> Result<Projection, QueryError> {
        let word = self.ident("a column or aggregate")?;
        let upper = word.to_ascii_uppercase();
        let aggregate = matches!(upper.as_str(), "AVG" | "MIN" | "MAX");
        if upper == "COUNT" {
            // COUNT, COUNT(*) and COUNT(col) all count matching rows.
            if self.peek() == Some(&Tok::Sym('(')) {
                self.pos += 1;
                match self.next() {
                    Some(Tok::Sym('*')) | Some(Tok::Word(_)) => {}
                    other => return Err(QueryError::Syntax(format!("bad COUNT argument {}", describe(other.as_ref())))),
                }
                self.sym(')')?;
            }
            return Ok(Projection::Count);
        }
        if aggregate && self.peek() == Some(&Tok::Sym('(')) {
            self.pos += 1;
            let col = self.ident("a column name")?;
            self.sym(')')?;
            return Ok(match upper.as_str() {
                "AVG" => Projection::Avg(col),
                "MIN" => Projection::Min(col),
                _ => Projection::Max(col),
            });
        }
        Ok(Projection::Column(word))
    }

    fn literal(&mut self) -> Result<Literal, QueryError> {
        match self.next() {
            Some(Tok::Str(s)) => Ok(Literal::Text(s)),
            Some(Tok::Num(n)) => Ok(Literal::Number(n)),
            other => Err(QueryError::Syntax(format!("expected a literal, found {}", describe(other.as_ref())))),
        }
    }
}

fn describe(tok: Option<&Tok>) -> String {
    match tok {
        None => "end of query".into(),
        Some(Tok::Word(w)) => format!("{w:?}"),
        Some(Tok::Str(s)) => format!("'{s}'"),
        Some(Tok::Num(n)) => n.to_string(),
        Some(Tok::Sym(c)) => format!("'{c}'"),
    }
}

pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut p = QueryParser { toks: lex_query(text)?, pos: 0 };
    p.keyword("SELECT")?;
    let projection = p.projection()?;
    p.keyword("FROM")?;
    let table = p.ident("a table name")?;
    let mut filters = Vec::new();
    if matches!(p.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case("WHERE")) {
        p.pos += 1;
        loop {
            let col = p.ident("a column name")?;
            p.sym('=')?;
            filters.push((col, p.literal()?));
            match p.peek() {
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("AND") => p.pos += 1,
                _ => break,
            }
        }
    }
    if p.peek() == Some(&Tok::Sym(';')) {
        p.pos += 1;
    }
    if p.pos < p.toks.len() {
        return Err(QueryError::Syntax(format!(
            "unexpected trailing {}",
            describe(p.peek())
        )));
    }
    Ok(Query { projection, table, filters })
}

fn cell_matches(cell: &str, literal: &Literal) -> bool {
    match literal {
        Literal::Text(s) => cell == s,
        Literal::Number(n) => cell.trim().parse::<f64>().is_ok_and(|v| v == *n),
    }
}

/// Result of running a query: a scalar or a list of cells.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryResult {
    Scalar(String),
    Rows(Vec<String>),
}

impl QueryResult {
    pub fn render(&self) -> String {
        match self {
            QueryResult::Scalar(s) => s.clone(),
            QueryResult::Rows(rows) if rows.is_empty() => "(no rows)".to_string(),
            QueryResult::Rows(rows) if rows.len() > MAX_RESULT_ROWS => {
                let mut out = rows[..MAX_RESULT_ROWS].join("\n");
                out.push_str(&format!("\n... [{} more rows truncated]", rows.len() - MAX_RESULT_ROWS));
                out
            }
            QueryResult::Rows(rows) => rows.join("\n"),
        }
    }
}

pub fn execute(query: &Query, store: &TableStore) -> Result<QueryResult, QueryError> {
    let table = store
        .table(&query.table)
        .ok_or_else(|| QueryError::Execution(format!("no such table {:?}", query.table)))?;
    let column = |name: &str| {
        table
            .column_index(name)
            .ok_or_else(|| QueryError::Execution(format!("no such column {name:?} in {}", query.table)))
    };
    let filters = query
        .filters
        .iter()
        .map(|(c, lit)| Ok((column(c)?, lit)))
        .collect::<Result<Vec<_>, QueryError>>()?;
    let rows: Vec<&Vec<String>> = table
        .rows
        .iter()
        .filter(|row| filters.iter().all(|(i, lit)| cell_matches(&row[*i], lit)))
        .collect();
    let numbers = |name: &str| -> Result<Vec<f64>, QueryError> {
        let i = column(name)?;
        rows.iter()
            .map(|r| {
                r[i].trim().parse::<f64>().map_err(|_| {
                    QueryError::Execution(format!("column {name:?} holds non-numeric value {:?}", r[i]))
                })
            })
            .collect()
    };
    let scalar = |v: Option<f64>| QueryResult::Scalar(v.map_or("NULL".to_string(), format_number));
    Ok(match &query.projection {
        Projection::Count => QueryResult::Scalar(rows.len().to_string()),
        Projection::Column(name) => {
            let i = column(name)?;
            QueryResult::Rows(rows.iter().map(|r| r[i].clone()).collect())
        }
        Projection::Avg(name) => {
            let v = numbers(name)?;
            scalar((!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64))
        }
        Projection::Min(name) => scalar(numbers(name)?.into_iter().reduce(f64::min)),
        Projection::Max(name) => scalar(numbers(name)?.into_iter().reduce(f64::max)),
    })
}

pub fn run_query(text: &str, store: &TableStore) -> Result<QueryResult, QueryError> {
    execute(&parse_query(text)?, store)
}

/// Pulls the query out of a translator reply (code fences and chatter allowed).
pub fn extract_query(reply: &str) -> String {
    let body: String = reply
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");
    let upper = body.to_ascii_uppercase();
    let start = upper.find("SELECT").unwrap_or(0);
    let rest = &body[start..];
    let end = rest.find(';').map_or(rest.len(), |i| i + 1);
    rest[..end].trim().to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredQueryOutcome {
    pub observation: Observation,
    pub attempts: usize,
    pub last_query: Option<String>,
}

/// Translates a natural-language request into the restricted grammar with
/// the backend and executes it, feeding errors back for up to three attempts.
pub fn structured_query(nl_request: &str, store: &TableStore, backend: &dyn Backend) -> StructuredQueryOutcome {
    let mut last_error: Option<(String, String)> = None;
    let mut last_query = None;
    for attempt in 1..=MAX_QUERY_ATTEMPTS {
        let req = GenerationRequest::new(
            Role::Query,
            prompts::query_system(),
            prompts::query_user(nl_request, &store.schema_text(), last_error.as_ref()),
        );
        let reply = match backend.generate(&req) {
            Ok(r) => r,
            Err(e) => {
                return StructuredQueryOutcome {
                    observation: Observation::tool_error(format!("query translation failed: {e}")),
                    attempts: attempt,
                    last_query,
                }
            }
        };
        let query = extract_query(&reply);
        last_query = Some(query.clone());
        match run_query(&query, store) {
            Ok(result) => {
                return StructuredQueryOutcome {
                    observation: Observation::ok(result.render()),
                    attempts: attempt,
                    last_query,
                }
            }
            Err(e) => last_error = Some((query, e.to_string())),
        }
    }
    let (query, error) = last_error.expect("at least one attempt ran");
    StructuredQueryOutcome {
        observation: Observation::tool_error(format!(
            "query failed after {MAX_QUERY_ATTEMPTS} attempts; last query {query:?}: {error}"
        )),
        attempts: MAX_QUERY_ATTEMPTS,
        last_query,
    }
}

/// Documentation for the tables and columns a request mentions; the whole
/// manual when nothing matches.
pub fn schema_manual(query: &str, store: &TableStore) -> String {
    let tokens = tokenize(query);
    let hit = |text: &str| {
        let lower = text.to_lowercase();
        tokens.iter().any(|t| lower.contains(t.as_str()))
    };
    let describe_col = |table: &str, col: &str| {
        let desc = store
            .docs
            .get(table)
            .and_then(|d| d.get(col))
            .map_or("(no description)", String::as_str);
        format!("  {col}: {desc}")
    };
    let mut sections = Vec::new();
    for (name, table) in &store.tables {
        let lines: Vec<String> = if hit(name) {
            table.columns.iter().map(|c| describe_col(name, c)).collect()
        } else {
            table
                .columns
                .iter()
                .filter(|c| {
                    hit(c) || store.docs.get(name).and_then(|d| d.get(*c)).is_some_and(|d| hit(d))
                })
                .map(|c| describe_col(name, c))
                .collect()
        };
        if !lines.is_empty() {
            sections.push(format!("Table {name}({})\n{}", table.columns.join(", "), lines.join("\n")));
        }
    }
    if sections.is_empty() {
        return full_manual(store);
    }
    sections.join("\n")
}

fn full_manual(store: &TableStore) -> String {
    store
        .tables
        .iter()
        .map(|(name, table)| {
            let cols: Vec<String> = table
                .columns
                .iter()
                .map(|c| {
                    let desc = store
                        .docs
                        .get(name)
                        .and_then(|d| d.get(c))
                        .map_or("(no description)", String::as_str);
                    format!("  {c}: {desc}")
                })
                .collect();
            format!("Table {name}({})\n{}", table.columns.join(", "), cols.join("\n"))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;

    fn patients() -> TableStore {
        let mut store = TableStore::new();
        let rows = vec![
            vec!["1".into(), "30".into(), "F".into()],
            vec!["2".into(), "40".into(), "F".into()],
            vec!["3".into(), "50".into(), "M".into()],
        ];
        store.insert(
            "patients",
            Table::new(vec!["id".into(), "age".into(), "sex".into()], rows).unwrap(),
        );
        store.describe("patients", "age", "Age in years at admission");
        store.describe("patients", "sex", "Recorded biological sex, F or M");
        store
    }

    #[test]
    fn count_and_avg() {
        let store = patients();
        assert_eq!(run_query("SELECT COUNT FROM patients", &store).unwrap().render(), "3");
        assert_eq!(
            run_query("SELECT AVG(age) FROM patients WHERE sex = 'F'", &store).unwrap().render(),
            "35"
        );
        assert_eq!(run_query("select max(age) from patients;", &store).unwrap().render(), "50");
        assert_eq!(run_query("SELECT MIN(age) FROM patients WHERE sex = 'X'", &store).unwrap().render(), "NULL");
        assert_eq!(
            run_query("SELECT id FROM patients WHERE sex = 'F' AND age = 40", &store).unwrap(),
            QueryResult::Rows(vec!["2".into()])
        );
        assert_eq!(run_query("SELECT COUNT(*) FROM patients WHERE age = 30.0", &store).unwrap().render(), "1");
    }

    #[test]
    fn avg_matches_independent_filter() {
        let store = patients();
        let t = store.table("patients").unwrap();
        let ages: Vec<f64> = t.rows.iter().filter(|r| r[2] == "F").map(|r| r[1].parse().unwrap()).collect();
        let expected = ages.iter().sum::<f64>() / ages.len() as f64;
        assert_eq!(
            run_query("SELECT AVG(age) FROM patients WHERE sex = 'F'", &store).unwrap(),
            QueryResult::Scalar(format_number(expected))
        );
    }

    #[test]
    fn errors() {
        let store = patients();
        assert!(matches!(run_query("SELEC id FROM patients", &store), Err(QueryError::Syntax(_))));
        assert!(matches!(run_query("SELECT id FROM", &store), Err(QueryError::Syntax(_))));
        assert!(matches!(run_query("SELECT id FROM visits", &store), Err(QueryError::Execution(_))));
        assert!(matches!(run_query("SELECT AVG(sex) FROM patients", &store), Err(QueryError::Execution(_))));
        assert!(matches!(run_query("SELECT id FROM patients WHERE name = 'x'", &store), Err(QueryError::Execution(_))));
        assert!(matches!(run_query("SELECT id FROM patients WHERE sex = 'F", &store), Err(QueryError::Syntax(_))));
    }

    #[test]
    fn row_cap() {
        let mut store = TableStore::new();
        let rows = (0..60).map(|i| vec![i.to_string()]).collect();
        store.insert("t", Table::new(vec!["x".into()], rows).unwrap());
        let text = run_query("SELECT x FROM t", &store).unwrap().render();
        assert_eq!(text.lines().count(), 51);
        assert!(text.ends_with("... [10 more rows truncated]"));
    }

    #[test]
    fn arity_enforced() {
        assert!(Table::new(vec!["a".into(), "b".into()], vec![vec!["1".into()]]).is_err());
    }

    #[test]
    fn extracts_from_fenced_reply() {
        let reply = "Here you go:\n```sql\nSELECT COUNT FROM patients;\n```";
        assert_eq!(extract_query(reply), "SELECT COUNT FROM patients;");
    }

    #[test]
    fn translation_first_try() {
        let store = patients();
        let backend = ScriptedBackend::from_replies([(Role::Query, vec!["SELECT COUNT FROM patients"])]);
        let out = structured_query("how many patients", &store, &backend);
        assert_eq!(out.observation, Observation::ok("3"));
        assert_eq!(out.attempts, 1);
    }

    #[test]
    fn translation_retries_with_error() {
        let store = patients();
        let backend = ScriptedBackend::from_replies([
            (Role::Query, vec!["SELECT COUNT FROM visits"]),
            (Role::Query, vec!["SELECT COUNT FROM patients"]),
        ]);
        let out = structured_query("how many patients", &store, &backend);
        assert_eq!(out.observation.text, "3");
        assert_eq!(out.attempts, 2);
        let calls = backend.calls();
        assert!(calls[1].user_prompt.contains("no such table"));
    }

    #[test]
    fn translation_gives_up_after_three() {
        let store = patients();
        let backend = ScriptedBackend::from_replies([
            (Role::Query, vec!["nope"]),
            (Role::Query, vec!["nope"]),
            (Role::Query, vec!["nope"]),
            (Role::Query, vec!["SELECT COUNT FROM patients"]),
        ]);
        let out = structured_query("how many", &store, &backend);
        assert_eq!(out.attempts, 3);
        assert_eq!(out.observation.status, crate::model::ObservationStatus::ToolError);
        assert_eq!(backend.calls().len(), 3);
    }

    #[test]
    fn manual_lookup() {
        let store = patients();
        let by_table = schema_manual("patients", &store);
        assert!(by_table.contains("  id: (no description)"));
        assert!(by_table.contains("  age: Age in years"));
        let by_desc = schema_manual("admission", &store);
        assert!(by_desc.contains("age"));
        assert!(!by_desc.contains("  sex:"));
        let fallback = schema_manual("glucose", &store);
        assert_eq!(fallback, full_manual(&store));
    }

    #[test]
    fn manual_matches_substring_scan() {
        let store = patients();
        let oracle = |q: &str| -> Vec<String> {
            let toks = tokenize(q);
            let contains = |s: &str| toks.iter().any(|t| s.to_lowercase().contains(t.as_str()));
            let mut cols = Vec::new();
            for (name, table) in &store.tables {
                for c in &table.columns {
                    let doc = store.docs.get(name).and_then(|m| m.get(c));
                    if contains(name) || contains(c) || doc.is_some_and(|d| contains(d)) {
                        cols.push(c.clone());
                    }
                }
            }
            cols
        };
        for q in ["sex", "years", "biological", "id", "zzz", "PATIENT age"] {
            let out = schema_manual(q, &store);
            let expected = oracle(q);
            if expected.is_empty() {
                assert_eq!(out, full_manual(&store), "{q}");
                continue;
            }
            let listed: Vec<String> = out
                .lines()
                .filter_map(|l| l.strip_prefix("  "))
                .map(|l| l.split(':').next().unwrap().to_string())
                .collect();
            assert_eq!(listed, expected, "{q}");
        }
    }

    #[test]
    fn loads_csv_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("patients.csv"), "id,age,sex\n1,30,F\n2,40,F\n").unwrap();
        fs::write(dir.path().join("manual.json"), r#"{"patients":{"age":"years"}}"#).unwrap();
        let store = TableStore::load_dir(dir.path()).unwrap();
        assert_eq!(store.table("patients").unwrap().rows.len(), 2);
        assert_eq!(store.docs["patients"]["age"], "years");

        fs::write(dir.path().join("bad.csv"), "a,b\n1\n").unwrap();
        assert!(TableStore::load_dir(dir.path()).is_err());
    }
}
