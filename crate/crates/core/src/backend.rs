//! Generation backends: the policy/LLM calls behind every stage.
//!
//! [`ScriptedBackend`] replays authored replies so that every agent contract
//! can be exercised deterministically. [`HttpBackend`] talks to an
//! OpenAI-compatible chat-completions endpoint.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "http")]
pub use http::{HttpBackend, HttpConfig, RetryPolicy};

pub const POLICY_TEMPERATURE: f64 = 0.0;
pub const VERIFIER_TEMPERATURE: f64 = 0.0;
pub const CANDIDATE_TEMPERATURE: f64 = 0.7;

/// Which stage a generation call serves. Scripts are keyed by its tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Policy,
    Reflect,
    Suggest,
    Merge,
    Refine,
    Select,
    Query,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Policy,
        Role::Reflect,
        Role::Suggest,
        Role::Merge,
        Role::Refine,
        Role::Select,
        Role::Query,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Role::Policy => "policy",
            Role::Reflect => "reflect",
            Role::Suggest => "suggest",
            Role::Merge => "merge",
            Role::Refine => "refine",
            Role::Select => "select",
            Role::Query => "query",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub role: Role,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub n_samples: u32,
}

impl GenerationRequest {
    pub fn new(role: Role, system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        let temperature = match role {
            Role::Policy => POLICY_TEMPERATURE,
            _ => VERIFIER_TEMPERATURE,
        };
        Self {
            role,
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature,
            max_tokens: 512,
            n_samples: 1,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_samples(mut self, n: u32) -> Self {
        self.n_samples = n.max(1);
        self
    }

    /// System and user prompt joined, as seen by script conditions.
    pub fn full_prompt(&self) -> String {
        format!("{}\n{}", self.system_prompt, self.user_prompt)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("script exhausted")]
    ScriptExhausted { tag: String },
    #[error("script error: {0}")]
    Script(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Network(_) => true,
            BackendError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    /// `n` completions for one request; always exactly `n` or an error.
    fn sample(&self, req: &GenerationRequest, n: usize) -> Result<Vec<String>, BackendError>;

    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let mut out = self.sample(req, 1)?;
        out.pop()
            .ok_or_else(|| BackendError::InvalidResponse("no completion returned".into()))
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn sample(&self, req: &GenerationRequest, n: usize) -> Result<Vec<String>, BackendError> {
        (**self).sample(req, n)
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        (**self).generate(req)
    }
}

/// One scripted reply batch for a role stream.
///
/// When `if_prompt_contains` is set and the prompt lacks that text, the
/// entry answers with `else_replies` instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub match_tag: String,
    pub sequence_index: usize,
    pub replies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub if_prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub else_replies: Option<Vec<String>>,
}

impl ScriptEntry {
    pub fn new(role: Role, sequence_index: usize, replies: &[&str]) -> Self {
        Self {
            match_tag: role.tag().to_string(),
            sequence_index,
            replies: replies.iter().map(|s| s.to_string()).collect(),
            if_prompt_contains: None,
            else_replies: None,
        }
    }

    pub fn when_prompt_contains(mut self, needle: &str, otherwise: &[&str]) -> Self {
        self.if_prompt_contains = Some(needle.to_string());
        self.else_replies = Some(otherwise.iter().map(|s| s.to_string()).collect());
        self
    }

    fn replies_for(&self, prompt: &str) -> Result<&[String], BackendError> {
        match &self.if_prompt_contains {
            Some(needle) if !prompt.contains(needle.as_str()) => {
                self.else_replies.as_deref().ok_or_else(|| {
                    BackendError::Script(format!(
                        "{} entry {}: prompt lacks {needle:?} and no else_replies given",
                        self.match_tag, self.sequence_index
                    ))
                })
            }
            _ => Ok(&self.replies),
        }
    }
}

/// Record of one call served by a scripted backend.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub role: Role,
    pub system_prompt: String,
    pub user_prompt: String,
    pub n: usize,
}

/// Deterministic playback backend.
///
/// Entries are consumed strictly in `sequence_index` order within each tag
/// stream. A call whose tag has no stream at all is a script error.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    streams: Mutex<HashMap<String, VecDeque<ScriptEntry>>>,
    calls: Mutex<Vec<CallRecord>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, BackendError> {
        let mut by_tag: BTreeMap<String, Vec<ScriptEntry>> = BTreeMap::new();
        for entry in entries {
            if entry.replies.is_empty() {
                return Err(BackendError::Script(format!(
                    "{} entry {} has no replies",
                    entry.match_tag, entry.sequence_index
                )));
            }
            if entry.else_replies.as_ref().is_some_and(Vec::is_empty) {
                return Err(BackendError::Script(format!(
                    "{} entry {} has empty else_replies",
                    entry.match_tag, entry.sequence_index
                )));
            }
            by_tag.entry(entry.match_tag.clone()).or_default().push(entry);
        }
        let mut streams = HashMap::new();
        for (tag, mut list) in by_tag {
            list.sort_by_key(|e| e.sequence_index);
            for (i, e) in list.iter().enumerate() {
                if e.sequence_index != i {
                    return Err(BackendError::Script(format!(
                        "{tag} stream: expected sequence_index {i}, found {}",
                        e.sequence_index
                    )));
                }
            }
            streams.insert(tag, VecDeque::from(list));
        }
        Ok(Self {
            streams: Mutex::new(streams),
            calls: Mutex::new(Vec::new()),
        })
    }

    /// Builds a script from `(role, replies)` pairs, numbering each stream.
    pub fn from_replies<'a>(items: impl IntoIterator<Item = (Role, Vec<&'a str>)>) -> Self {
        let mut counters: HashMap<Role, usize> = HashMap::new();
        let entries = items
            .into_iter()
            .map(|(role, replies)| {
                let idx = counters.entry(role).or_default();
                let entry = ScriptEntry::new(role, *idx, &replies);
                *idx += 1;
                entry
            })
            .collect();
        Self::new(entries).expect("well-formed script")
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn calls_for(&self, role: Role) -> Vec<CallRecord> {
        self.calls().into_iter().filter(|c| c.role == role).collect()
    }

    pub fn remaining(&self, role: Role) -> usize {
        self.streams
            .lock()
            .expect("script poisoned")
            .get(role.tag())
            .map_or(0, VecDeque::len)
    }
}

impl Backend for ScriptedBackend {
    fn sample(&self, req: &GenerationRequest, n: usize) -> Result<Vec<String>, BackendError> {
        if n == 0 {
            return Err(BackendError::Script("sample size must be at least 1".into()));
        }
        self.calls.lock().expect("call log poisoned").push(CallRecord {
            role: req.role,
            system_prompt: req.system_prompt.clone(),
            user_prompt: req.user_prompt.clone(),
            n,
        });
        let tag = req.role.tag();
        let entry = {
            let mut streams = self.streams.lock().expect("script poisoned");
            let stream = streams.get_mut(tag).ok_or_else(|| {
                BackendError::Script(format!("no script entries for tag {tag:?}"))
            })?;
            stream.pop_front().ok_or_else(|| BackendError::ScriptExhausted {
                tag: tag.to_string(),
            })?
        };
        let replies = entry.replies_for(&req.full_prompt())?;
        if req.temperature == 0.0 {
            return Ok(vec![replies[0].clone(); n]);
        }
        Ok(replies.iter().cycle().take(n).cloned().collect())
    }
}

/// Script file contents: one shared stream, or one stream per task id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptBook {
    Shared(Vec<ScriptEntry>),
    PerTask(BTreeMap<String, Vec<ScriptEntry>>),
}

impl ScriptBook {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))
    }
}

/// Hands each task run the backend it should talk to.
pub trait BackendFactory: Send + Sync {
    fn for_task(&self, task_id: &str) -> Result<Arc<dyn Backend>, BackendError>;
}

/// Every task shares one backend instance.
pub struct SharedBackend(pub Arc<dyn Backend>);

impl BackendFactory for SharedBackend {
    fn for_task(&self, _task_id: &str) -> Result<Arc<dyn Backend>, BackendError> {
        Ok(self.0.clone())
    }
}

/// Scripted factory: a per-task book yields a fresh backend on every call;
/// a shared book yields one instance for the whole run.
pub struct ScriptFactory {
    book: ScriptBook,
    shared: Option<Arc<dyn Backend>>,
}

impl ScriptFactory {
    pub fn new(book: ScriptBook) -> Result<Self, BackendError> {
        let shared = match &book {
            ScriptBook::Shared(entries) => {
                Some(Arc::new(ScriptedBackend::new(entries.clone())?) as Arc<dyn Backend>)
            }
            ScriptBook::PerTask(_) => None,
        };
        Ok(Self { book, shared })
    }
}

impl BackendFactory for ScriptFactory {
    fn for_task(&self, task_id: &str) -> Result<Arc<dyn Backend>, BackendError> {
        if let Some(shared) = &self.shared {
            return Ok(shared.clone());
        }
        let ScriptBook::PerTask(map) = &self.book else {
            unreachable!("shared books always carry an instance")
        };
        let entries = map
            .get(task_id)
            .ok_or_else(|| BackendError::Script(format!("no script for task {task_id:?}")))?;
        Ok(Arc::new(ScriptedBackend::new(entries.clone())?))
    }
}

/// Wraps a backend and counts calls per role.
pub struct CountingBackend<B> {
    inner: B,
    counts: [AtomicUsize; 7],
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            counts: Default::default(),
        }
    }

    pub fn count(&self, role: Role) -> usize {
        self.counts[role as usize].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> usize {
        Role::ALL.iter().map(|r| self.count(*r)).sum()
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn sample(&self, req: &GenerationRequest, n: usize) -> Result<Vec<String>, BackendError> {
        self.counts[req.role as usize].fetch_add(1, Ordering::Relaxed);
        self.inner.sample(req, n)
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        self.counts[req.role as usize].fetch_add(1, Ordering::Relaxed);
        self.inner.generate(req)
    }
}

#[cfg(feature = "http")]
mod http {
    use std::thread;
    use std::time::Duration;

    use serde::Deserialize;
    use serde_json::json;

    use super::{Backend, BackendError, GenerationRequest};

    pub const API_KEY_ENV: &str = "REFLECTOOL_API_KEY";

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct RetryPolicy {
        pub max_retries: u32,
        pub initial_backoff: Duration,
    }

    impl Default for RetryPolicy {
        fn default() -> Self {
            Self {
                max_retries: 3,
                initial_backoff: Duration::from_millis(500),
            }
        }
    }

    impl RetryPolicy {
        pub fn backoff(&self, attempt: u32) -> Duration {
            self.initial_backoff * 2u32.saturating_pow(attempt)
        }
    }

    #[derive(Debug, Clone)]
    pub struct HttpConfig {
        pub base_url: String,
        pub model: String,
        pub api_key: Option<String>,
        pub seed: Option<u64>,
        pub retry: RetryPolicy,
        pub timeout: Duration,
    }

    impl HttpConfig {
        pub fn new(base_url: impl Into<String>) -> Self {
            Self {
                base_url: base_url.into(),
                model: "default".to_string(),
                api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
                seed: None,
                retry: RetryPolicy::default(),
                timeout: Duration::from_secs(120),
            }
        }
    }

    #[derive(Deserialize)]
    struct ChatResponse {
        choices: Vec<Choice>,
    }

    #[derive(Deserialize)]
    struct Choice {
        message: Message,
    }

    #[derive(Deserialize)]
    struct Message {
        #[serde(default)]
        content: Option<String>,
    }

    /// Client for `POST {base_url}/v1/chat/completions`.
    pub struct HttpBackend {
        config: HttpConfig,
        agent: ureq::Agent,
    }

    impl HttpBackend {
        pub fn new(config: HttpConfig) -> Self {
            let agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(config.timeout))
                .build()
                .into();
            Self { config, agent }
        }

        pub fn config(&self) -> &HttpConfig {
            &self.config
        }

        fn endpoint(&self) -> String {
            format!(
                "{}/v1/chat/completions",
                self.config.base_url.trim_end_matches('/')
            )
        }

        fn request_once(&self, req: &GenerationRequest, n: usize) -> Result<Vec<String>, BackendError> {
            let mut body = json!({
                "model": self.config.model,
                "messages": [
                    {"role": "system", "content": req.system_prompt},
                    {"role": "user", "content": req.user_prompt},
                ],
                "temperature": req.temperature,
                "max_tokens": req.max_tokens,
                "n": n,
            });
            if let Some(seed) = self.config.seed {
                body["seed"] = json!(seed);
            }
            let mut call = self
                .agent
                .post(&self.endpoint())
                .header("Content-Type", "application/json");
            if let Some(key) = &self.config.api_key {
                call = call.header("Authorization", &format!("Bearer {key}"));
            }
            let mut response = call
                .send(body.to_string())
                .map_err(|e| BackendError::Network(e.to_string()))?;
            let status = response.status().as_u16();
            let text = response
                .body_mut()
                .read_to_string()
                .map_err(|e| BackendError::Network(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(BackendError::Status { code: status, body: text });
            }
            let parsed: ChatResponse = serde_json::from_str(&text)
                .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
            Ok(parsed
                .choices
                .into_iter()
                .map(|c| c.message.content.unwrap_or_default())
                .collect())
        }

        fn request_with_retry(&self, req: &GenerationRequest, n: usize) -> Result<Vec<String>, BackendError> {
            let retry = self.config.retry;
            let mut attempt = 0;
            loop {
                match self.request_once(req, n) {
                    Err(e) if e.is_transient() && attempt < retry.max_retries => {
                        log::warn!("transient backend failure ({e}); retry {}", attempt + 1);
                        thread::sleep(retry.backoff(attempt));
                        attempt += 1;
                    }
                    other => return other,
                }
            }
        }
    }

    impl Backend for HttpBackend {
        fn sample(&self, req: &GenerationRequest, n: usize) -> Result<Vec<String>, BackendError> {
            if n == 0 {
                return Err(BackendError::InvalidResponse("sample size must be at least 1".into()));
            }
            let mut out = Vec::with_capacity(n);
            // Servers that ignore `n` answer with a single choice; keep asking.
            while out.len() < n {
                let batch = self.request_with_retry(req, n - out.len())?;
                if batch.is_empty() {
                    return Err(BackendError::InvalidResponse("response has no choices".into()));
                }
                out.extend(batch);
            }
            out.truncate(n);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(role: Role) -> GenerationRequest {
        GenerationRequest::new(role, "sys", "user")
    }

    #[test]
    fn playback_in_order() {
        let b = ScriptedBackend::from_replies([
            (Role::Policy, vec!["Action: Finish[answer=A]"]),
            (Role::Policy, vec!["second"]),
        ]);
        assert_eq!(b.generate(&req(Role::Policy)).unwrap(), "Action: Finish[answer=A]");
        assert_eq!(b.generate(&req(Role::Policy)).unwrap(), "second");
        let err = b.generate(&req(Role::Policy)).unwrap_err();
        assert_eq!(err.to_string(), "script exhausted");
    }

    #[test]
    fn unknown_tag_is_loud() {
        let b = ScriptedBackend::from_replies([(Role::Policy, vec!["x"])]);
        assert!(matches!(b.generate(&req(Role::Reflect)), Err(BackendError::Script(_))));
    }

    #[test]
    fn sample_pads_by_repetition() {
        let b = ScriptedBackend::from_replies([(Role::Policy, vec!["r1", "r2"]), (Role::Policy, vec!["r1", "r2"])]);
        let r = req(Role::Policy).with_temperature(CANDIDATE_TEMPERATURE);
        assert_eq!(b.sample(&r, 3).unwrap(), vec!["r1", "r2", "r1"]);
        // Greedy decoding returns identical samples.
        assert_eq!(b.sample(&req(Role::Policy), 3).unwrap(), vec!["r1", "r1", "r1"]);
    }

    #[test]
    fn sample_one_is_generate() {
        let make = || ScriptedBackend::from_replies([(Role::Select, vec!["2", "1"])]);
        assert_eq!(make().sample(&req(Role::Select), 1).unwrap()[0], make().generate(&req(Role::Select)).unwrap());
    }

    #[test]
    fn conditional_entries() {
        let entry = ScriptEntry::new(Role::Policy, 0, &["with demo"]).when_prompt_contains("DEMO", &["without"]);
        let b = ScriptedBackend::new(vec![entry.clone()]).unwrap();
        assert_eq!(b.generate(&GenerationRequest::new(Role::Policy, "", "has DEMO")).unwrap(), "with demo");
        let b = ScriptedBackend::new(vec![entry]).unwrap();
        assert_eq!(b.generate(&req(Role::Policy)).unwrap(), "without");
    }

    #[test]
    fn sequence_gaps_rejected() {
        let bad = vec![ScriptEntry::new(Role::Policy, 1, &["x"])];
        assert!(ScriptedBackend::new(bad).is_err());
        let empty = vec![ScriptEntry::new(Role::Policy, 0, &[])];
        assert!(ScriptedBackend::new(empty).is_err());
    }

    #[test]
    fn script_book_shapes() {
        let shared: ScriptBook = serde_json::from_str(
            r#"[{"match_tag":"policy","sequence_index":0,"replies":["a"]}]"#,
        )
        .unwrap();
        assert!(matches!(shared, ScriptBook::Shared(_)));
        let per_task: ScriptBook = serde_json::from_str(
            r#"{"t1":[{"match_tag":"policy","sequence_index":0,"replies":["a"]}]}"#,
        )
        .unwrap();
        let factory = ScriptFactory::new(per_task).unwrap();
        let b1 = factory.for_task("t1").unwrap();
        assert_eq!(b1.generate(&req(Role::Policy)).unwrap(), "a");
        // A fresh instance per request.
        assert_eq!(factory.for_task("t1").unwrap().generate(&req(Role::Policy)).unwrap(), "a");
        assert!(factory.for_task("t2").is_err());
    }

    #[test]
    fn counting_wrapper() {
        let b = CountingBackend::new(ScriptedBackend::from_replies([
            (Role::Refine, vec!["a"]),
            (Role::Policy, vec!["b"]),
        ]));
        b.generate(&req(Role::Refine)).unwrap();
        b.sample(&req(Role::Policy), 2).unwrap();
        assert_eq!(b.count(Role::Refine), 1);
        assert_eq!(b.count(Role::Policy), 1);
        assert_eq!(b.total(), 2);
    }
}
