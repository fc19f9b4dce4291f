//! Long-term memory of solved tasks, ranked by Okapi BM25 over instructions.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Outcome, TaskInstance, Trajectory};

pub const STORE_VERSION: u32 = 1;

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

/// Incrementally built BM25 index over token lists.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_freq: HashMap<String, usize>,
    term_freqs: Vec<HashMap<String, usize>>,
    doc_lengths: Vec<usize>,
    total_length: usize,
}

impl Bm25Index {
    pub fn new(params: Bm25Params) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    pub fn from_docs<I, D>(params: Bm25Params, docs: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: AsRef<[String]>,
    {
        let mut index = Self::new(params);
        for doc in docs {
            index.add(doc.as_ref());
        }
        index
    }

    pub fn add(&mut self, tokens: &[String]) {
        let mut tf: HashMap<String, usize> = HashMap::new();
        for t in tokens {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for term in tf.keys() {
            *self.doc_freq.entry(term.clone()).or_default() += 1;
        }
        self.term_freqs.push(tf);
        self.doc_lengths.push(tokens.len());
        self.total_length += tokens.len();
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_lengths.is_empty()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn doc_lengths(&self) -> &[usize] {
        &self.doc_lengths
    }

    pub fn avg_doc_length(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.len() as f64
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Score of document `doc` for `query`; repeated query tokens count again.
    pub fn score(&self, query: &[String], doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf_map = &self.term_freqs[doc];
        let len = self.doc_lengths[doc] as f64;
        let avg = self.avg_doc_length();
        let mut score = 0.0;
        for term in query {
            let tf = tf_map.get(term).copied().unwrap_or(0);
            if tf == 0 {
                continue;
            }
            let tf = tf as f64;
            score += self.idf(term) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
        }
        score
    }

    /// Indices of the `k` best documents, best first, ties by insertion order.
    pub fn top_k(&self, query: &[String], k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> =
            (0..self.len()).map(|i| (i, self.score(query, i))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        scored
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    #[serde(rename = "task")]
    pub task_input: TaskInstance,
    pub trajectory: Trajectory,
    pub insertion_index: usize,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("memory store format: {0}")]
    Format(String),
}

/// Store of successful task/trajectory pairs.
#[derive(Debug, Default)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
    index: Bm25Index,
    retrievals: AtomicUsize,
}

impl Clone for MemoryStore {
    fn clone(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            index: self.index.clone(),
            retrievals: AtomicUsize::new(0),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    version: u32,
    entries: Vec<MemoryEntry>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::with_params(Bm25Params::default())
    }

    pub fn with_params(params: Bm25Params) -> Self {
        Self {
            entries: Vec::new(),
            index: Bm25Index::new(params),
            retrievals: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    /// Number of `retrieve` calls served so far.
    pub fn retrieval_count(&self) -> usize {
        self.retrievals.load(Ordering::Relaxed)
    }

    /// Stores `{task, trajectory}` only when the trajectory succeeded.
    pub fn add_if_success(&mut self, task: &TaskInstance, traj: &Trajectory) -> bool {
        if traj.outcome != Outcome::Success {
            return false;
        }
        self.push(task.clone(), traj.clone());
        true
    }

    fn push(&mut self, task: TaskInstance, trajectory: Trajectory) {
        self.index.add(&tokenize(&task.instruction));
        let insertion_index = self.entries.len();
        self.entries.push(MemoryEntry {
            task_input: task,
            trajectory,
            insertion_index,
        });
    }

    pub fn score(&self, query: &str, entry: usize) -> f64 {
        self.index.score(&tokenize(query), entry)
    }

    /// Top-`k` entries by similarity of their instruction to `query`.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<&MemoryEntry> {
        self.retrievals.fetch_add(1, Ordering::Relaxed);
        self.index
            .top_k(&tokenize(query), k)
            .into_iter()
            .map(|(i, _)| &self.entries[i])
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = StoreFile {
            version: STORE_VERSION,
            entries: self.entries.clone(),
        };
        serde_json::to_string_pretty(&file).expect("memory entries serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        let file: StoreFile =
            serde_json::from_str(text).map_err(|e| MemoryError::Format(e.to_string()))?;
        if file.version != STORE_VERSION {
            return Err(MemoryError::Format(format!(
                "unsupported store version {} (expected {STORE_VERSION})",
                file.version
            )));
        }
        let mut store = Self::new();
        let mut entries = file.entries;
        entries.sort_by_key(|e| e.insertion_index);
        for (i, e) in entries.into_iter().enumerate() {
            if e.insertion_index != i {
                return Err(MemoryError::Format(format!(
                    "insertion indices are not contiguous at {i}"
                )));
            }
            if e.trajectory.outcome != Outcome::Success {
                return Err(MemoryError::Format(format!(
                    "entry {i} holds a trajectory that did not succeed"
                )));
            }
            store.push(e.task_input, e.trajectory);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
