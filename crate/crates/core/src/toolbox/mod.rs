//! Tool registry, modality gating, and the built-in tools.

pub mod calculator;
pub mod ner;
pub mod query;
pub mod retrieval;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;

use crate::backend::Backend;
use crate::model::{
    ActionInvocation, Modality, Observation, TaskInstance, ToolCategory, ToolDescriptor, FINISH,
    PLAN, THINK,
};
use ner::Gazetteer;
use query::TableStore;
use retrieval::Corpus;

pub const MAX_OBSERVATION_CHARS: usize = 4000;
pub const TRUNCATION_MARKER: &str = "\n...[truncated]";

pub const CALCULATOR: &str = "Calculator";
pub const CORPUS_RETRIEVER: &str = "corpus_retriever";
pub const REMOTE_LOOKUP: &str = "remote_lookup";
pub const IMAGE_QA: &str = "image_qa";
pub const IMAGE_CAPTIONER: &str = "image_captioner";
pub const SCHEMA_MANUAL: &str = "schema_manual";
pub const STRUCTURED_QUERY: &str = "structured_query";
pub const ENTITY_TAGGER: &str = "entity_tagger";
pub const DOC_RAG: &str = "doc_rag";

/// Resources the built-in tools read during a run.
#[derive(Default)]
pub struct ToolEnv {
    /// Relative attachment paths resolve against this directory.
    pub base_dir: PathBuf,
    pub corpus: Corpus,
    pub gazetteer: Gazetteer,
    tables: Mutex<HashMap<PathBuf, Arc<TableStore>>>,
}

impl fmt::Debug for ToolEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolEnv")
            .field("base_dir", &self.base_dir)
            .field("corpus_len", &self.corpus.len())
            .finish_non_exhaustive()
    }
}

impl ToolEnv {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_dir: base_dir.into(),
            ..Self::default()
        }
    }

    pub fn with_corpus(mut self, corpus: Corpus) -> Self {
        self.corpus = corpus;
        self
    }

    pub fn with_gazetteer(mut self, gazetteer: Gazetteer) -> Self {
        self.gazetteer = gazetteer;
        self
    }

    /// Registers an in-memory table store under an attachment reference.
    pub fn with_table_store(self, reference: &str, store: TableStore) -> Self {
        let key = self.resolve(reference);
        self.tables
            .lock()
            .expect("table cache poisoned")
            .insert(key, Arc::new(store));
        self
    }

    pub fn resolve(&self, reference: &str) -> PathBuf {
        let p = Path::new(reference);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn table_store(&self, reference: &str) -> Result<Arc<TableStore>, String> {
        let key = self.resolve(reference);
        let mut cache = self.tables.lock().expect("table cache poisoned");
        if let Some(store) = cache.get(&key) {
            return Ok(store.clone());
        }
        let store = Arc::new(TableStore::load_dir(&key).map_err(|e| e.to_string())?);
        cache.insert(key, store.clone());
        Ok(store)
    }
}

/// Everything a handler may consult for one invocation.
pub struct ToolCall<'a> {
    pub invocation: &'a ActionInvocation,
    pub task: &'a TaskInstance,
    pub backend: &'a dyn Backend,
    pub env: &'a ToolEnv,
}

pub type ToolResult = Result<String, String>;
pub type Handler = Arc<dyn Fn(&ToolCall<'_>) -> ToolResult + Send + Sync>;

#[derive(Clone)]
pub struct RegisteredTool {
    pub descriptor: ToolDescriptor,
    handler: Handler,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    SelectionError(String),
    UnknownAction(String),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("tool {0:?} is already registered")]
    Duplicate(String),
    #[error("inner action {0:?} cannot be replaced or given input requirements")]
    InnerAction(String),
}

/// Ordered action space: inner actions plus pluggable tools.
#[derive(Clone)]
pub struct ToolRegistry {
    tools: IndexMap<String, RegisteredTool>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

fn inner_handler(_: &ToolCall<'_>) -> ToolResult {
    Ok("OK. Continue.".to_string())
}

impl ToolRegistry {
    /// A registry holding only Plan, Think and Finish.
    pub fn with_inner_actions() -> Self {
        let mut tools = IndexMap::new();
        let inner = [
            (PLAN, "Lay out a step-by-step solution before acting; typically the first step."),
            (THINK, "Reason about the observations gathered so far."),
            (FINISH, "End the task and report the answer, e.g. Finish[answer=...]."),
        ];
        for (name, description) in inner {
            let handler: Handler = if name == FINISH {
                Arc::new(|_: &ToolCall<'_>| Ok("Task finished.".to_string()))
            } else {
                Arc::new(inner_handler)
            };
            tools.insert(
                name.to_string(),
                RegisteredTool {
                    descriptor: ToolDescriptor::new(name, description, ToolCategory::Inner, &[]),
                    handler,
                },
            );
        }
        Self { tools }
    }

    pub fn register<F>(&mut self, descriptor: ToolDescriptor, handler: F) -> Result<(), RegistryError>
    where
        F: Fn(&ToolCall<'_>) -> ToolResult + Send + Sync + 'static,
    {
        if crate::model::is_inner_action(&descriptor.name) || descriptor.category == ToolCategory::Inner {
            return Err(RegistryError::InnerAction(descriptor.name));
        }
        if self.tools.contains_key(&descriptor.name) {
            return Err(RegistryError::Duplicate(descriptor.name));
        }
        self.tools.insert(
            descriptor.name.clone(),
            RegisteredTool {
                descriptor,
                handler: Arc::new(handler),
            },
        );
        Ok(())
    }

    /// Swaps the handler of an existing tool, e.g. to wire a remote service.
    pub fn set_handler<F>(&mut self, name: &str, handler: F) -> bool
    where
        F: Fn(&ToolCall<'_>) -> ToolResult + Send + Sync + 'static,
    {
        match self.tools.get_mut(name) {
            Some(tool) if !crate::model::is_inner_action(name) => {
                tool.handler = Arc::new(handler);
                true
            }
            _ => false,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.values().map(|t| &t.descriptor)
    }

    pub fn get(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.get(name).map(|t| &t.descriptor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// One `name: description` line per tool, in registration order.
    pub fn catalog(&self) -> String {
        self.descriptors()
            .map(ToolDescriptor::catalog_line)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Flags tools whose required input is missing from the task.
    pub fn validate_invocation(&self, inv: &ActionInvocation, task: &TaskInstance) -> Verdict {
        let Some(desc) = self.get(&inv.action_name) else {
            return Verdict::UnknownAction(format!(
                "unknown action {:?}; choose one of: {}",
                inv.action_name,
                self.names().collect::<Vec<_>>().join(", ")
            ));
        };
        match desc
            .required_modalities
            .iter()
            .find(|m| !task.attachments.has(**m))
        {
            None => Verdict::Ok,
            Some(Modality::Image) => Verdict::SelectionError("no image input".into()),
            Some(Modality::TableStore) => Verdict::SelectionError("no database input".into()),
            Some(Modality::DocumentFiles) => {
                Verdict::SelectionError("no document file input".into())
            }
            Some(Modality::None) => Verdict::Ok,
        }
    }

    /// Gates, dispatches, and bounds the observation text.
    pub fn invoke(
        &self,
        inv: &ActionInvocation,
        task: &TaskInstance,
        backend: &dyn Backend,
        env: &ToolEnv,
    ) -> Observation {
        match self.validate_invocation(inv, task) {
            Verdict::Ok => {}
            Verdict::SelectionError(reason) | Verdict::UnknownAction(reason) => {
                return Observation::selection_error(format!(
                    "Tool selection error: {reason}."
                ));
            }
        }
        let tool = &self.tools[&inv.action_name];
        let call = ToolCall {
            invocation: inv,
            task,
            backend,
            env,
        };
        match (tool.handler)(&call) {
            Ok(text) => Observation::ok(truncate_observation(&text)),
            Err(text) => Observation::tool_error(truncate_observation(&text)),
        }
    }
}

/// Caps text at `MAX_OBSERVATION_CHARS` characters, marker included.
pub fn truncate_observation(text: &str) -> String {
    if text.chars().count() <= MAX_OBSERVATION_CHARS {
        return text.to_string();
    }
    let keep = MAX_OBSERVATION_CHARS - TRUNCATION_MARKER.chars().count();
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

fn calculator_tool(call: &ToolCall<'_>) -> ToolResult {
    calculator::calculate(call.invocation.primary_input()).map_err(|e| e.to_string())
}

fn corpus_tool(call: &ToolCall<'_>) -> ToolResult {
    if call.env.corpus.is_empty() {
        return Err("knowledge base is empty".to_string());
    }
    let query = call.invocation.param("query").unwrap_or_else(|| call.invocation.primary_input());
    let k = match call.invocation.param("k") {
        Some(k) => k.trim().parse::<usize>().ok().filter(|k| *k >= 1).ok_or_else(|| format!("bad k {k:?}"))?,
        None => 1,
    };
    let hits = retrieval::corpus_retrieve(query, &call.env.corpus, k);
    Ok(hits.into_iter().map(|h| h.text).collect::<Vec<_>>().join("\n"))
}

fn doc_rag_tool(call: &ToolCall<'_>) -> ToolResult {
    let files = &call.task.attachments.document_files;
    let paths: Vec<PathBuf> = files.iter().map(|f| call.env.resolve(f)).collect();
    let query = call.invocation.primary_input();
    let chunks = retrieval::doc_rag_chunks(query, &paths)?;
    // Markers carry the attachment name as given on the task.
    let label = |c: &retrieval::Chunk| {
        paths
            .iter()
            .position(|p| p.display().to_string() == c.source)
            .map_or(c.source.clone(), |i| files[i].clone())
    };
    Ok(retrieval::render_chunks(&chunks, label))
}

fn table_store_for(call: &ToolCall<'_>) -> Result<Arc<TableStore>, String> {
    let reference = call
        .task
        .attachments
        .table_store_ref
        .as_deref()
        .ok_or("no database input")?;
    call.env.table_store(reference)
}

fn structured_query_tool(call: &ToolCall<'_>) -> ToolResult {
    let store = table_store_for(call)?;
    let outcome = query::structured_query(call.invocation.primary_input(), &store, call.backend);
    match outcome.observation.status {
        crate::model::ObservationStatus::Ok => Ok(outcome.observation.text),
        _ => Err(outcome.observation.text),
    }
}

fn schema_manual_tool(call: &ToolCall<'_>) -> ToolResult {
    let store = table_store_for(call)?;
    Ok(query::schema_manual(call.invocation.primary_input(), &store))
}

fn entity_tool(call: &ToolCall<'_>) -> ToolResult {
    let entities = ner::entity_tag(call.invocation.primary_input(), &call.env.gazetteer);
    Ok(ner::render_entities(&entities))
}

/// The built-in toolbox.
pub fn default_registry() -> ToolRegistry {
    use Modality::*;
    use ToolCategory::*;
    let mut r = ToolRegistry::with_inner_actions();
    let tools: Vec<(ToolDescriptor, Handler)> = vec![
        (
            ToolDescriptor::new(CORPUS_RETRIEVER, "Search the medical knowledge base for passages relevant to a query.", Knowledge, &[]),
            Arc::new(corpus_tool),
        ),
        (
            ToolDescriptor::new(REMOTE_LOOKUP, "Look up a term with an external knowledge service (search engine, terminology or drug database).", Knowledge, &[]),
            Arc::new(|_: &ToolCall<'_>| Err("offline".to_string())),
        ),
        (
            ToolDescriptor::new(IMAGE_QA, "Ask a question about the attached medical image.", Multimodal, &[Image]),
            Arc::new(|_: &ToolCall<'_>| Err("no image model configured".to_string())),
        ),
        (
            ToolDescriptor::new(IMAGE_CAPTIONER, "Produce a structured caption of the attached medical image.", Multimodal, &[Image]),
            Arc::new(|_: &ToolCall<'_>| Err("no image model configured".to_string())),
        ),
        (
            ToolDescriptor::new(CALCULATOR, "Evaluate an arithmetic expression with + - * / ^ and parentheses.", Numerical, &[]),
            Arc::new(calculator_tool),
        ),
        (
            ToolDescriptor::new(SCHEMA_MANUAL, "Describe the tables and columns of the attached database that relate to a query.", Numerical, &[TableStore]),
            Arc::new(schema_manual_tool),
        ),
        (
            ToolDescriptor::new(STRUCTURED_QUERY, "Answer a natural-language question about patients from the attached database by translating it into a query.", Numerical, &[TableStore]),
            Arc::new(structured_query_tool),
        ),
        (
            ToolDescriptor::new(ENTITY_TAGGER, "List the biomedical entities mentioned in a sentence.", Data, &[]),
            Arc::new(entity_tool),
        ),
        (
            ToolDescriptor::new(DOC_RAG, "Retrieve passages from the uploaded document files; only usable when files are attached.", Data, &[DocumentFiles]),
            Arc::new(doc_rag_tool),
        ),
    ];
    for (descriptor, handler) in tools {
        r.register(descriptor, move |c: &ToolCall<'_>| handler(c))
            .expect("built-in names are unique");
    }
    r
}
