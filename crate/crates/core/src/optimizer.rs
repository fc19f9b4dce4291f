//! Optimization stage: attempt a training task, reflect on a failure,
//! retry once, and on success grow memory and tool-wise experience.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{run_loop, Deps, PolicyContext};
use crate::backend::{Backend, BackendError, GenerationRequest, Role};
use crate::experience::{derive_suggestions, ExperienceLedger};
use crate::memory::MemoryStore;
use crate::model::{render_transcript, Outcome, TaskInstance, Trajectory};
use crate::prompts::{self, Guidance};
use crate::toolbox::{ToolEnv, ToolRegistry};
use crate::verifier::VerifierConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_steps: usize,
    /// Reflect and retry even when the first attempt already succeeded.
    pub always_reflect: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_steps: 10,
            always_reflect: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub task_id: String,
    pub c1: Trajectory,
    pub suggestion: Option<String>,
    pub c2: Option<Trajectory>,
    pub memory_added: bool,
    pub suggestions_merged: usize,
    /// Why optimization of this task stopped early, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl OptimizationReport {
    fn new(task_id: &str, c1: Trajectory) -> Self {
        Self {
            task_id: task_id.to_string(),
            c1,
            suggestion: None,
            c2: None,
            memory_added: false,
            suggestions_merged: 0,
            error: None,
        }
    }
}

fn plain_loop(
    task: &TaskInstance,
    guidance: Option<&Guidance>,
    registry: &ToolRegistry,
    env: &ToolEnv,
    backend: &dyn Backend,
    max_steps: usize,
) -> Trajectory {
    let ledger = ExperienceLedger::new(registry);
    let ctx = PolicyContext {
        task,
        registry,
        demos: "",
        ledger: &ledger,
        verifier: VerifierConfig::none(),
        guidance,
    };
    run_loop(&ctx, max_steps, env, backend)
}

/// First attempt: no memory, no verifier.
pub fn attempt(
    task: &TaskInstance,
    registry: &ToolRegistry,
    env: &ToolEnv,
    backend: &dyn Backend,
    max_steps: usize,
) -> Trajectory {
    plain_loop(task, None, registry, env, backend, max_steps)
}

/// One reflection call comparing the attempt with the gold answer; the
/// reply is the suggestion verbatim.
pub fn reflect(task: &TaskInstance, c1: &Trajectory, backend: &dyn Backend) -> Result<String, BackendError> {
    let req = GenerationRequest::new(
        Role::Reflect,
        prompts::reflect_system(),
        prompts::reflect_user(
            task,
            &render_transcript(c1, true),
            c1.final_answer.as_deref(),
            &task.gold,
        ),
    );
    let reply = backend.generate(&req)?;
    if reply.trim().is_empty() {
        return Err(BackendError::InvalidResponse("empty reflection".into()));
    }
    Ok(reply)
}

/// Second attempt with the first transcript and the suggestion in the
/// system prompt.
pub fn retry_with_suggestion(
    task: &TaskInstance,
    c1: &Trajectory,
    suggestion: &str,
    registry: &ToolRegistry,
    env: &ToolEnv,
    backend: &dyn Backend,
    max_steps: usize,
) -> Trajectory {
    let guidance = Guidance {
        previous_transcript: render_transcript(c1, true),
        suggestion: suggestion.to_string(),
    };
    plain_loop(task, Some(&guidance), registry, env, backend, max_steps)
}

/// One optimization step with an explicit backend.
pub fn optimize_task_with(
    task: &TaskInstance,
    memory: &mut MemoryStore,
    ledger: &mut ExperienceLedger,
    cfg: &OptimizerConfig,
    registry: &ToolRegistry,
    env: &ToolEnv,
    backend: &dyn Backend,
) -> OptimizationReport {
    let c1 = attempt(task, registry, env, backend, cfg.max_steps);
    let mut report = OptimizationReport::new(&task.id, c1);
    if report.c1.is_success() && !cfg.always_reflect {
        report.memory_added = memory.add_if_success(task, &report.c1);
        return report;
    }
    let suggestion = match reflect(task, &report.c1, backend) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("reflection for {} failed: {e}", task.id);
            report.error = Some(format!("reflection failed: {e}"));
            return report;
        }
    };
    let c2 = retry_with_suggestion(task, &report.c1, &suggestion, registry, env, backend, cfg.max_steps);
    report.suggestion = Some(suggestion);
    if c2.is_success() {
        report.memory_added = memory.add_if_success(task, &c2);
        let suggestions = derive_suggestions(task, &report.c1, &c2, registry, backend).unwrap_or_else(|e| {
            log::warn!("suggestion derivation for {} failed: {e}", task.id);
            Vec::new()
        });
        report.suggestions_merged = ledger.merge(&suggestions, backend);
    } else if c2.outcome == Outcome::Aborted {
        report.error = Some("retry aborted".to_string());
    }
    report.c2 = Some(c2);
    report
}

/// One optimization step using the backend the factory provides for the
/// task. A task whose backend cannot be built is reported, not fatal.
pub fn optimize_task(
    task: &TaskInstance,
    memory: &mut MemoryStore,
    ledger: &mut ExperienceLedger,
    cfg: &OptimizerConfig,
    deps: &Deps,
) -> OptimizationReport {
    match deps.backends.for_task(&task.id) {
        Ok(backend) => optimize_task_with(task, memory, ledger, cfg, &deps.registry, &deps.env, backend.as_ref()),
        Err(e) => {
            let mut c1 = Trajectory::new(task.id.clone());
            c1.outcome = Outcome::Aborted;
            let mut report = OptimizationReport::new(&task.id, c1);
            report.error = Some(format!("backend unavailable: {e}"));
            report
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    /// Number of tasks processed when the checkpoint was written.
    pub step: usize,
    pub memory: String,
    pub ledger: String,
    pub memory_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tasks: usize,
    pub checkpoint_every: usize,
    pub checkpoints: Vec<CheckpointInfo>,
}

impl Manifest {
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// The checkpoint written after the last task.
    pub fn last(&self) -> Option<&CheckpointInfo> {
        self.checkpoints.last()
    }
}

pub fn memory_file(step: usize) -> String {
    format!("memory-{step}.json")
}

pub fn ledger_file(step: usize) -> String {
    format!("ledger-{step}.json")
}

fn write_checkpoint(
    dir: &Path,
    step: usize,
    memory: &MemoryStore,
    ledger: &ExperienceLedger,
) -> std::io::Result<CheckpointInfo> {
    let info = CheckpointInfo {
        step,
        memory: memory_file(step),
        ledger: ledger_file(step),
        memory_entries: memory.len(),
    };
    fs::write(dir.join(&info.memory), memory.to_json())?;
    fs::write(dir.join(&info.ledger), ledger.to_json())?;
    Ok(info)
}

/// Where and how often to checkpoint.
#[derive(Debug, Clone)]
pub struct CheckpointPlan {
    pub dir: PathBuf,
    pub every: usize,
}

/// Optimizes the tasks in order. With a plan, memory and ledger are written
/// after every `every` tasks and after the last one, and a manifest lists
/// the checkpoints.
pub fn optimize_suite(
    tasks: &[TaskInstance],
    memory: &mut MemoryStore,
    ledger: &mut ExperienceLedger,
    cfg: &OptimizerConfig,
    deps: &Deps,
    plan: Option<&CheckpointPlan>,
) -> std::io::Result<Vec<OptimizationReport>> {
    let mut reports = Vec::with_capacity(tasks.len());
    let mut checkpoints = Vec::new();
    if let Some(plan) = plan {
        fs::create_dir_all(&plan.dir)?;
    }
    for (i, task) in tasks.iter().enumerate() {
        let report = optimize_task(task, memory, ledger, cfg, deps);
        log::info!(
            "optimized {} ({}/{}): memory_added={} merged={}",
            task.id,
            i + 1,
            tasks.len(),
            report.memory_added,
            report.suggestions_merged
        );
        reports.push(report);
        if let Some(plan) = plan {
            let done = i + 1;
            if done % plan.every.max(1) == 0 || done == tasks.len() {
                checkpoints.push(write_checkpoint(&plan.dir, done, memory, ledger)?);
            }
        }
    }
    if let Some(plan) = plan {
        let manifest = Manifest {
            tasks: tasks.len(),
            checkpoint_every: plan.every,
            checkpoints,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(plan.dir.join(MANIFEST_FILE), text)?;
    }
    Ok(reports)
}
