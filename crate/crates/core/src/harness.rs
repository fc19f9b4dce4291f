//! Suite loading, evaluation metrics, sweeps, and reports.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_task_with, AgentConfig, Deps};
use crate::backend::{BackendError, CountingBackend, Role};
use crate::experience::ExperienceLedger;
use crate::memory::MemoryStore;
use crate::model::{is_inner_action, Outcome, TaskInstance, Trajectory};
use crate::optimizer::Manifest;
use crate::verifier::{VerifierConfig, VerifierMode};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

impl FormatError {
    pub fn line(&self) -> Option<usize> {
        match self {
            FormatError::Line { line, .. } => Some(*line),
            FormatError::Io { .. } => None,
        }
    }
}

/// Parses JSONL task text; blank lines are skipped, line numbers are 1-based.
pub fn parse_suite(text: &str) -> Result<Vec<TaskInstance>, FormatError> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskInstance = serde_json::from_str(line).map_err(|e| FormatError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        task.matcher.validate().map_err(|message| FormatError::Line { line: line_no, message })?;
        if !seen.insert(task.id.clone()) {
            return Err(FormatError::Line {
                line: line_no,
                message: format!("duplicate task id {:?}", task.id),
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_suite(path: &Path) -> Result<Vec<TaskInstance>, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_suite(&text)
}

/// Step-level facts for one task, enough to recompute every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub outcome: Outcome,
    pub final_answer: Option<String>,
    pub steps: usize,
    /// Steps whose action is not Plan, Think, or Finish.
    pub tool_steps: usize,
    pub selection_error_steps: usize,
    pub verifier_fallbacks: usize,
    pub policy_calls: usize,
    pub verifier_calls: usize,
    pub runtime_seconds: f64,
}

impl TaskRecord {
    pub fn from_trajectory(traj: &Trajectory, runtime_seconds: f64, policy_calls: usize, verifier_calls: usize) -> Self {
        Self {
            task_id: traj.task_id.clone(),
            outcome: traj.outcome,
            final_answer: traj.final_answer.clone(),
            steps: traj.steps.len(),
            tool_steps: traj
                .steps
                .iter()
                .filter(|s| !is_inner_action(&s.invocation.action_name))
                .count(),
            selection_error_steps: traj.selection_error_steps(),
            verifier_fallbacks: traj.steps.iter().filter(|s| s.verifier_fallback).count(),
            policy_calls,
            verifier_calls,
            runtime_seconds,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub tasks: usize,
    pub accuracy: f64,
    pub step_error_rate: f64,
    pub task_error_rate: f64,
    pub mean_steps: f64,
    pub runtime_seconds_per_task: f64,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

impl SuiteMetrics {
    /// Folds per-task records. With `tool_steps_only` the step error rate
    /// is taken over tool steps instead of all steps.
    pub fn from_records(records: &[TaskRecord], tool_steps_only: bool) -> Self {
        let n = records.len();
        let successes = records.iter().filter(|r| r.outcome == Outcome::Success).count();
        let steps: usize = records.iter().map(|r| r.steps).sum();
        let denominator = if tool_steps_only {
            records.iter().map(|r| r.tool_steps).sum()
        } else {
            steps
        };
        let flagged: usize = records.iter().map(|r| r.selection_error_steps).sum();
        let flagged_tasks = records.iter().filter(|r| r.selection_error_steps > 0).count();
        let runtime: f64 = records.iter().map(|r| r.runtime_seconds).sum();
        Self {
            tasks: n,
            accuracy: percent(successes, n),
            step_error_rate: percent(flagged, denominator),
            task_error_rate: percent(flagged_tasks, n),
            mean_steps: if n == 0 { 0.0 } else { steps as f64 / n as f64 },
            runtime_seconds_per_task: if n == 0 { 0.0 } else { runtime / n as f64 },
        }
    }

    pub fn successes(&self) -> usize {
        (self.accuracy * self.tasks as f64 / 100.0).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: SuiteMetrics,
    pub records: Vec<TaskRecord>,
    pub trajectories: Vec<Trajectory>,
}

impl Evaluation {
    pub fn policy_calls(&self) -> usize {
        self.records.iter().map(|r| r.policy_calls).sum()
    }

    pub fn verifier_calls(&self) -> usize {
        self.records.iter().map(|r| r.verifier_calls).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub workers: usize,
    pub tool_steps_only: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            tool_steps_only: false,
        }
    }
}

/// Runs every task against read-only snapshots of memory and ledger.
///
/// Tasks fan out over `workers` threads; records stay in suite order. A
/// backend that cannot be built for some task fails the whole evaluation.
pub fn evaluate(
    suite: &[TaskInstance],
    memory: &MemoryStore,
    ledger: &ExperienceLedger,
    cfg: &AgentConfig,
    deps: &Deps,
    opts: &EvalOptions,
) -> Result<Evaluation, BackendError> {
    let next = AtomicUsize::new(0);
    type Slot = Option<Result<(Trajectory, TaskRecord), BackendError>>;
    let results: Mutex<Vec<Slot>> = Mutex::new((0..suite.len()).map(|_| None).collect());
    let workers = opts.workers.clamp(1, suite.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = suite.get(i) else { break };
                let result = deps.backends.for_task(&task.id).map(|backend| {
                    let counted = CountingBackend::new(backend);
                    let start = Instant::now();
                    let traj = run_task_with(task, memory, ledger, cfg, &deps.registry, &deps.env, &counted);
                    let runtime = start.elapsed().as_secs_f64();
                    let verifier_calls = counted.count(Role::Refine) + counted.count(Role::Select);
                    let record = TaskRecord::from_trajectory(&traj, runtime, counted.count(Role::Policy), verifier_calls);
                    (traj, record)
                });
                results.lock().expect("results poisoned")[i] = Some(result);
            });
        }
    });
    let mut trajectories = Vec::with_capacity(suite.len());
    let mut records = Vec::with_capacity(suite.len());
    for r in results.into_inner().expect("results poisoned") {
        let (t, rec) = r.expect("every task is processed")?;
        trajectories.push(t);
        records.push(rec);
    }
    Ok(Evaluation {
        metrics: SuiteMetrics::from_records(&records, opts.tool_steps_only),
        records,
        trajectories,
    })
}

/// One row of a report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    #[serde(flatten)]
    pub metrics: SuiteMetrics,
    pub policy_calls: usize,
    pub verifier_calls: usize,
    /// Total steps, for checking per-step verifier bounds.
    pub steps: usize,
}

impl ReportRow {
    pub fn from_evaluation(label: impl Into<String>, eval: &Evaluation) -> Self {
        Self {
            label: label.into(),
            metrics: eval.metrics,
            policy_calls: eval.policy_calls(),
            verifier_calls: eval.verifier_calls(),
            steps: eval.records.iter().map(|r| r.steps).sum(),
        }
    }
}

/// Evaluates `suite` against checkpoint 0 (empty memory, fresh ledger) and
/// then every checkpoint listed in the run directory's manifest.
/// Unreadable checkpoints are skipped with a warning.
pub fn sweep_optimization_steps(
    suite: &[TaskInstance],
    run_dir: &Path,
    cfg: &AgentConfig,
    deps: &Deps,
    opts: &EvalOptions,
) -> Result<Vec<ReportRow>, SweepError> {
    let manifest = Manifest::load(run_dir).map_err(|e| SweepError::Manifest(e.to_string()))?;
    let mut rows = Vec::new();
    let empty = MemoryStore::new();
    let fresh = ExperienceLedger::new(&deps.registry);
    let eval = evaluate(suite, &empty, &fresh, cfg, deps, opts)?;
    rows.push(ReportRow::from_evaluation("checkpoint-0", &eval));
    for c in &manifest.checkpoints {
        let memory = match MemoryStore::load(&run_dir.join(&c.memory)) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("skipping checkpoint {}: {e}", c.step);
                continue;
            }
        };
        let ledger = match ExperienceLedger::load(&run_dir.join(&c.ledger), &deps.registry) {
            Ok(l) => l,
            Err(e) => {
                log::warn!("skipping checkpoint {}: {e}", c.step);
                continue;
            }
        };
        let eval = evaluate(suite, &memory, &ledger, cfg, deps, opts)?;
        rows.push(ReportRow::from_evaluation(format!("checkpoint-{}", c.step), &eval));
    }
    Ok(rows)
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Evaluates both verifier modes at every verification size.
pub fn sweep_verification_size(
    suite: &[TaskInstance],
    memory: &MemoryStore,
    ledger: &ExperienceLedger,
    n_values: &[usize],
    cfg: &AgentConfig,
    deps: &Deps,
    opts: &EvalOptions,
) -> Result<Vec<ReportRow>, BackendError> {
    let mut rows = Vec::new();
    for mode in [VerifierMode::IterativeRefinement, VerifierMode::CandidateSelection] {
        for &n in n_values {
            let verifier = VerifierConfig { mode, n: n.max(1) };
            let cfg = AgentConfig { verifier, ..*cfg };
            let eval = evaluate(suite, memory, ledger, &cfg, deps, opts)?;
            rows.push(ReportRow::from_evaluation(format!("{}-n{n}", mode.short_name()), &eval));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub const CSV_COLUMNS: [&str; 10] = [
    "label",
    "tasks",
    "accuracy",
    "step_error_rate",
    "task_error_rate",
    "mean_steps",
    "runtime_seconds_per_task",
    "policy_calls",
    "verifier_calls",
    "steps",
];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut out = CSV_COLUMNS.join(",");
            out.push('\n');
            for r in rows {
                let m = &r.metrics;
                let _ = writeln!(
                    out,
                    "{},{},{:.4},{:.4},{:.4},{:.4},{:.6},{},{},{}",
                    csv_field(&r.label),
                    m.tasks,
                    m.accuracy,
                    m.step_error_rate,
                    m.task_error_rate,
                    m.mean_steps,
                    m.runtime_seconds_per_task,
                    r.policy_calls,
                    r.verifier_calls,
                    r.steps
                );
            }
            out
        }
    }
}

pub fn emit_report(rows: &[ReportRow], format: ReportFormat, path: &Path) -> io::Result<()> {
    fs::write(path, render_report(rows, format))
}

/// One JSON value per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("value serializes"));
        out.push('\n');
    }
    out
}

pub fn read_records(path: &Path) -> Result<Vec<TaskRecord>, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| FormatError::Line {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptBook, ScriptEntry, ScriptFactory};
    use crate::toolbox::{default_registry, ToolEnv};

    fn record(id: &str, steps: usize, flagged: usize, success: bool) -> TaskRecord {
        TaskRecord {
            task_id: id.into(),
            outcome: if success { Outcome::Success } else { Outcome::Failure },
            final_answer: None,
            steps,
            tool_steps: steps / 2,
            selection_error_steps: flagged,
            verifier_fallbacks: 0,
            policy_calls: steps,
            verifier_calls: 0,
            runtime_seconds: 0.5,
        }
    }

    #[test]
    fn suite_parsing() {
        assert!(parse_suite("").unwrap().is_empty());
        let line = |id: &str| format!(r#"{{"id":"{id}","instruction":"q","gold":"a"}}"#);
        let three = [line("a"), line("b"), line("c")].join("\n");
        assert_eq!(parse_suite(&three).unwrap().len(), 3);
        let dup = [line("a"), line("b"), line("a")].join("\n");
        assert_eq!(parse_suite(&dup).unwrap_err().line(), Some(3));
        assert_eq!(parse_suite("{oops").unwrap_err().line(), Some(1));
        let bad_tol = r#"{"id":"x","instruction":"q","gold":"1","matcher":{"kind":"numeric","tol":-1}}"#;
        assert_eq!(parse_suite(bad_tol).unwrap_err().line(), Some(1));
    }

    #[test]
    fn suite_field_names() {
        let text = r#"{"id":"t","instruction":"q","attachments":{"context_text":"c","table_store":"db","files":["a.txt"],"images":["x.png"]},"gold":"1.5","matcher":{"kind":"numeric","tol":0.1}}"#;
        let t = &parse_suite(text).unwrap()[0];
        assert_eq!(t.attachments.table_store_ref.as_deref(), Some("db"));
        assert_eq!(t.attachments.document_files, ["a.txt"]);
        assert_eq!(t.attachments.image_refs, ["x.png"]);
        assert_eq!(t.matcher, crate::model::Matcher::Numeric { tol: 0.1 });
    }

    #[test]
    fn hand_counted_rates() {
        // 10 tasks, 40 steps, one task with 2 flagged steps.
        let mut records: Vec<TaskRecord> = (0..10).map(|i| record(&format!("t{i}"), 4, 0, i < 7)).collect();
        records[3].selection_error_steps = 2;
        let m = SuiteMetrics::from_records(&records, false);
        assert_eq!(format!("{:.2}", m.step_error_rate), "5.00");
        assert_eq!(format!("{:.2}", m.task_error_rate), "10.00");
        assert_eq!(format!("{:.2}", m.accuracy), "70.00");
        assert_eq!(m.mean_steps, 4.0);
        let tool = SuiteMetrics::from_records(&records, true);
        assert_eq!(format!("{:.2}", tool.step_error_rate), "10.00");
        let clean: Vec<TaskRecord> = (0..3).map(|i| record(&format!("c{i}"), 2, 0, true)).collect();
        let m = SuiteMetrics::from_records(&clean, false);
        assert_eq!((m.step_error_rate, m.task_error_rate), (0.0, 0.0));
    }

    fn golden_rows() -> Vec<ReportRow> {
        let records = vec![record("a", 4, 1, true), record("b", 2, 0, false)];
        vec![
            ReportRow {
                label: "refine-n2".into(),
                metrics: SuiteMetrics::from_records(&records, false),
                policy_calls: 6,
                verifier_calls: 9,
                steps: 6,
            },
            ReportRow {
                label: "select, n=2".into(),
                metrics: SuiteMetrics::default(),
                policy_calls: 0,
                verifier_calls: 0,
                steps: 0,
            },
        ]
    }

    #[test]
    fn csv_golden() {
        let expected = "\
label,tasks,accuracy,step_error_rate,task_error_rate,mean_steps,runtime_seconds_per_task,policy_calls,verifier_calls,steps
refine-n2,2,50.0000,16.6667,50.0000,3.0000,0.500000,6,9,6
\"select, n=2\",0,0.0000,0.0000,0.0000,0.0000,0.000000,0,0,0
";
        assert_eq!(render_report(&golden_rows(), ReportFormat::Csv), expected);
        assert_eq!(render_report(&[], ReportFormat::Csv), format!("{}\n", CSV_COLUMNS.join(",")));
    }

    #[test]
    fn json_golden() {
        let rows = &golden_rows()[..1];
        let expected = r#"[
  {
    "label": "refine-n2",
    "tasks": 2,
    "accuracy": 50.0,
    "step_error_rate": 16.666666666666668,
    "task_error_rate": 50.0,
    "mean_steps": 3.0,
    "runtime_seconds_per_task": 0.5,
    "policy_calls": 6,
    "verifier_calls": 9,
    "steps": 6
  }
]
"#;
        assert_eq!(render_report(rows, ReportFormat::Json), expected);
        let back: Vec<ReportRow> = serde_json::from_str(expected).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn evaluate_is_a_fold_over_records() {
        let tasks: Vec<TaskInstance> = (0..6)
            .map(|i| TaskInstance::new(format!("t{i}"), format!("compute {i}"), "14"))
            .collect();
        let book = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut entries = Vec::new();
                if i % 3 == 0 {
                    entries.push(ScriptEntry::new(Role::Policy, 0, &["Action: doc_rag[input=x]"]));
                } else {
                    entries.push(ScriptEntry::new(Role::Policy, 0, &["Action: Calculator[input=(3+4)*2]"]));
                }
                let answer = if i % 2 == 0 { "Action: Finish[answer=14]" } else { "Action: Finish[answer=0]" };
                entries.push(ScriptEntry::new(Role::Policy, 1, &[answer]));
                (t.id.clone(), entries)
            })
            .collect();
        let registry = default_registry();
        let ledger = ExperienceLedger::new(&registry);
        let deps = Deps::new(registry, ToolEnv::default(), ScriptFactory::new(ScriptBook::PerTask(book)).unwrap());
        let memory = MemoryStore::new();
        let opts = EvalOptions { workers: 3, tool_steps_only: false };
        let eval = evaluate(&tasks, &memory, &ledger, &AgentConfig::default(), &deps, &opts).unwrap();
        let ids: Vec<&str> = eval.records.iter().map(|r| r.task_id.as_str()).collect();
        assert_eq!(ids, ["t0", "t1", "t2", "t3", "t4", "t5"]);
        assert_eq!(format!("{:.2}", eval.metrics.accuracy), "50.00");
        assert_eq!(format!("{:.2}", eval.metrics.step_error_rate), "16.67");
        assert_eq!(format!("{:.2}", eval.metrics.task_error_rate), "33.33");
        let reread: Vec<TaskRecord> = to_jsonl(&eval.records)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(SuiteMetrics::from_records(&reread, false), eval.metrics);
    }
}
