//! Knowledge-base and uploaded-document retrieval, both ranked with BM25.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{tokenize, Bm25Index, Bm25Params};

pub const CHUNK_WORDS: usize = 300;
pub const CHUNK_OVERLAP: usize = 50;
pub const DOC_RAG_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub text: String,
}

/// Read-only passage collection with a prebuilt BM25 index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
    index: Bm25Index,
}

impl Corpus {
    pub fn new(passages: Vec<Passage>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, p) in passages.iter().enumerate() {
            if !seen.insert(p.doc_id.as_str()) {
                return Err(CorpusError::Format {
                    line: i + 1,
                    message: format!("duplicate doc_id {:?}", p.doc_id),
                });
            }
        }
        let index = Bm25Index::from_docs(
            Bm25Params::default(),
            passages.iter().map(|p| tokenize(&p.text)),
        );
        Ok(Self { passages, index })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, CorpusError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, text)| Passage {
                    doc_id: id.to_string(),
                    text: text.to_string(),
                })
                .collect(),
        )
    }

    /// JSONL with one `{"doc_id": .., "text": ..}` object per line.
    pub fn load_jsonl(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        let mut passages = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: Passage = serde_json::from_str(line).map_err(|e| CorpusError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            passages.push(p);
        }
        Self::new(passages)
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub doc_id: String,
    pub score: f64,
    pub text: String,
}

/// Top-`k` passages for `query`, best first, ties by insertion order.
pub fn corpus_retrieve(query: &str, corpus: &Corpus, k: usize) -> Vec<Retrieved> {
    corpus
        .index
        .top_k(&tokenize(query), k)
        .into_iter()
        .map(|(i, score)| Retrieved {
            doc_id: corpus.passages[i].doc_id.clone(),
            score,
            text: corpus.passages[i].text.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub source: String,
    pub ordinal: usize,
    pub text: String,
}

/// Word windows of at most `CHUNK_WORDS`, consecutive windows sharing
/// `CHUNK_OVERLAP` words.
pub fn chunk_text(source: &str, text: &str) -> Vec<Chunk> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let stride = CHUNK_WORDS - CHUNK_OVERLAP;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < words.len() {
        let end = (start + CHUNK_WORDS).min(words.len());
        chunks.push(Chunk {
            source: source.to_string(),
            ordinal: chunks.len(),
            text: words[start..end].join(" "),
        });
        if end == words.len() {
            break;
        }
        start += stride;
    }
    chunks
}

/// Ranks chunks of the given files and returns the best three.
pub fn doc_rag_chunks(query: &str, files: &[PathBuf]) -> Result<Vec<(Chunk, f64)>, String> {
    let mut chunks = Vec::new();
    for path in files {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        chunks.extend(chunk_text(&path.display().to_string(), &text));
    }
    let index = Bm25Index::from_docs(Bm25Params::default(), chunks.iter().map(|c| tokenize(&c.text)));
    Ok(index
        .top_k(&tokenize(query), DOC_RAG_TOP_K)
        .into_iter()
        .map(|(i, s)| (chunks[i].clone(), s))
        .collect())
}

pub fn render_chunks(chunks: &[(Chunk, f64)], label: impl Fn(&Chunk) -> String) -> String {
    if chunks.is_empty() {
        return "No content found in the uploaded files.".to_string();
    }
    chunks
        .iter()
        .map(|(c, _)| format!("[source: {} #{}]\n{}", label(c), c.ordinal, c.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_idf_query_keeps_insertion_order() {
        let corpus = Corpus::from_pairs([("a", "alpha"), ("b", "beta"), ("c", "gamma")]).unwrap();
        let hits = corpus_retrieve("zeta", &corpus, 2);
        assert_eq!(hits.iter().map(|h| h.doc_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(hits.iter().all(|h| h.score == 0.0));
    }

    #[test]
    fn single_doc_and_cap() {
        let corpus = Corpus::from_pairs([("only", "renal")]).unwrap();
        let hits = corpus_retrieve("anything at all", &corpus, 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "only");
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Corpus::from_pairs([("a", "x"), ("a", "y")]).is_err());
    }

    #[test]
    fn chunk_windows() {
        let text: String = (0..700).map(|i| format!("w{i} ")).collect();
        let chunks = chunk_text("f", &text);
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.text.split_whitespace().count() <= CHUNK_WORDS));
        assert!(chunks[1].text.starts_with("w250 "));
        assert!(chunks[2].text.starts_with("w500 "));
        assert!(chunks[2].text.ends_with("w699"));
        assert!(chunk_text("f", "").is_empty());
        assert_eq!(chunk_text("f", "one two").len(), 1);
    }
}
