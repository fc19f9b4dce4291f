//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain strings and numbers and returns a JSON string, so
//! the page needs no generated TypeScript glue beyond `wasm-bindgen`'s own.

use reflectool::memory::{tokenize, Bm25Index, Bm25Params};
use reflectool::model::{parse_action, Attachments, Modality, TaskInstance};
use reflectool::toolbox::calculator::{evaluate, format_number};
use reflectool::toolbox::{default_registry, Verdict};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct TermScore {
    pub term: String,
    pub tf: usize,
    pub idf: f64,
    pub contribution: f64,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Ranked {
    pub index: usize,
    pub text: String,
    pub score: f64,
    pub length: usize,
    pub terms: Vec<TermScore>,
}

#[derive(Debug, Serialize)]
pub struct Ranking {
    pub avg_length: f64,
    pub query_tokens: Vec<String>,
    pub results: Vec<Ranked>,
}

/// Ranks the non-empty lines of `docs` against `query`.
pub fn rank(docs: &str, query: &str, k1: f64, b: f64, k: usize) -> Ranking {
    let lines: Vec<&str> = docs.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let tokenized: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l)).collect();
    let index = Bm25Index::from_docs(Bm25Params { k1, b }, &tokenized);
    let query_tokens = tokenize(query);
    let results = index
        .top_k(&query_tokens, k)
        .into_iter()
        .map(|(i, score)| {
            let mut terms: Vec<TermScore> = Vec::new();
            for t in &query_tokens {
                let tf = tokenized[i].iter().filter(|x| *x == t).count();
                if tf == 0 {
                    continue;
                }
                let single = std::slice::from_ref(t);
                match terms.iter_mut().find(|s| &s.term == t) {
                    Some(s) => s.contribution += index.score(single, i),
                    None => terms.push(TermScore {
                        term: t.clone(),
                        tf,
                        idf: index.idf(t),
                        contribution: index.score(single, i),
                    }),
                }
            }
            Ranked {
                index: i,
                text: lines[i].to_string(),
                score,
                length: tokenized[i].len(),
                terms,
            }
        })
        .collect();
    Ranking {
        avg_length: index.avg_doc_length(),
        query_tokens,
        results,
    }
}

#[derive(Debug, Serialize, PartialEq)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Calculation {
    Ok { value: f64, display: String },
    Error { message: String },
}

pub fn calculate(expr: &str) -> Calculation {
    match evaluate(expr) {
        Ok(value) => Calculation::Ok { value, display: format_number(value) },
        Err(e) => Calculation::Error { message: e.to_string() },
    }
}

#[derive(Debug, Serialize)]
pub struct GateRow {
    pub tool: String,
    pub requires: Vec<&'static str>,
    pub verdict: String,
}

#[derive(Debug, Serialize)]
pub struct Inspection {
    pub parsed: Option<ParsedAction>,
    pub parse_error: Option<String>,
    pub verdict: Option<String>,
    pub matrix: Vec<GateRow>,
}

#[derive(Debug, Serialize)]
pub struct ParsedAction {
    pub name: String,
    pub params: Vec<(String, String)>,
    pub canonical: String,
}

fn modality_label(m: Modality) -> &'static str {
    match m {
        Modality::None => "none",
        Modality::Image => "image",
        Modality::TableStore => "table store",
        Modality::DocumentFiles => "document files",
    }
}

fn verdict_text(v: &Verdict) -> String {
    match v {
        Verdict::Ok => "ok".to_string(),
        Verdict::SelectionError(r) => format!("selection error: {r}"),
        Verdict::UnknownAction(r) => r.clone(),
    }
}

/// Parses `action_text` and gates it, plus every registered tool, against a
/// task carrying the chosen attachments.
pub fn inspect(action_text: &str, image: bool, table: bool, files: bool) -> Inspection {
    let registry = default_registry();
    let attachments = Attachments {
        context_text: None,
        table_store_ref: table.then(|| "tables".to_string()),
        document_files: if files { vec!["notes.txt".to_string()] } else { vec![] },
        image_refs: if image { vec!["scan.png".to_string()] } else { vec![] },
    };
    let task = TaskInstance::new("demo", "demo", "").with_attachments(attachments);
    let matrix = registry
        .descriptors()
        .map(|d| {
            let probe = reflectool::model::ActionInvocation::new(d.name.clone(), [("input", "")]);
            GateRow {
                tool: d.name.clone(),
                requires: d.required_modalities.iter().map(|m| modality_label(*m)).collect(),
                verdict: verdict_text(&registry.validate_invocation(&probe, &task)),
            }
        })
        .collect();
    match parse_action(action_text) {
        Ok(inv) => Inspection {
            verdict: Some(verdict_text(&registry.validate_invocation(&inv, &task))),
            parsed: Some(ParsedAction {
                name: inv.action_name.clone(),
                params: inv.params.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                canonical: inv.render(),
            }),
            parse_error: None,
            matrix,
        },
        Err(e) => Inspection {
            parsed: None,
            parse_error: Some(e.to_string()),
            verdict: None,
            matrix,
        },
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
}

#[wasm_bindgen(js_name = rankDocuments)]
pub fn rank_documents(docs: &str, query: &str, k1: f64, b: f64, k: usize) -> String {
    to_json(&rank(docs, query, k1, b, k))
}

#[wasm_bindgen(js_name = calculate)]
pub fn calculate_json(expr: &str) -> String {
    to_json(&calculate(expr))
}

#[wasm_bindgen(js_name = inspectAction)]
pub fn inspect_action(action_text: &str, image: bool, table: bool, files: bool) -> String {
    to_json(&inspect(action_text, image, table, files))
}
