//! Inference-stage agent loop: retrieved demonstrations condition every
//! step, and each proposed action passes through the configured verifier.

use serde::{Deserialize, Serialize};

use crate::backend::{
    Backend, BackendError, BackendFactory, GenerationRequest, Role, CANDIDATE_TEMPERATURE,
    POLICY_TEMPERATURE,
};
use crate::experience::ExperienceLedger;
use crate::memory::{MemoryEntry, MemoryStore};
use crate::model::{
    leading_thought, parse_action, render_steps, render_transcript, ActionInvocation, Outcome, Step, TaskInstance,
    Trajectory, FINISH,
};
use crate::prompts::{self, Guidance};
use crate::toolbox::{ToolEnv, ToolRegistry};
use crate::verifier::{self, StepContext, VerifierConfig, VerifierMode};

/// Extra policy calls after an unreadable reply before the step is forced
/// to finish.
pub const POLICY_REPROMPTS: usize = 2;

const OMITTED_MARKER: &str = "(earlier steps omitted)\n";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_steps: usize,
    /// Demonstrations retrieved from memory per task.
    pub demo_k: usize,
    pub verifier: VerifierConfig,
    /// Character budget for the rendered demonstrations.
    pub prompt_budget_chars: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_steps: 10,
            demo_k: 2,
            verifier: VerifierConfig::none(),
            prompt_budget_chars: 8000,
        }
    }
}

/// Tools, their resources, and where generation calls go.
pub struct Deps {
    pub registry: ToolRegistry,
    pub env: ToolEnv,
    pub backends: Box<dyn BackendFactory>,
}

impl Deps {
    pub fn new(registry: ToolRegistry, env: ToolEnv, backends: impl BackendFactory + 'static) -> Self {
        Self {
            registry,
            env,
            backends: Box::new(backends),
        }
    }
}

/// Renders retrieved entries as worked examples.
///
/// When the text exceeds `budget` characters, steps are dropped oldest
/// first, one step per demonstration in turn, until it fits or no steps
/// remain.
pub fn render_demos(entries: &[&MemoryEntry], budget: usize) -> String {
    let mut skipped = vec![0usize; entries.len()];
    let render = |skipped: &[usize]| {
        entries
            .iter()
            .zip(skipped)
            .enumerate()
            .map(|(i, (e, &skip))| {
                let omitted = if skip > 0 { OMITTED_MARKER } else { "" };
                format!(
                    "Example {}:\n{}\n{omitted}{}",
                    i + 1,
                    prompts::task_block(&e.task_input),
                    render_steps(&e.trajectory.steps[skip..], true)
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut text = render(&skipped);
    let mut turn = 0;
    while text.chars().count() > budget {
        let Some(d) = (0..entries.len())
            .map(|o| (turn + o) % entries.len())
            .find(|&d| skipped[d] < entries[d].trajectory.steps.len())
        else {
            break;
        };
        skipped[d] += 1;
        turn = d + 1;
        text = render(&skipped);
    }
    text
}

/// Everything fixed for one task run.
#[derive(Clone, Copy)]
pub struct PolicyContext<'a> {
    pub task: &'a TaskInstance,
    pub registry: &'a ToolRegistry,
    pub demos: &'a str,
    pub ledger: &'a ExperienceLedger,
    pub verifier: VerifierConfig,
    pub guidance: Option<&'a Guidance>,
}

/// The action chosen for a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub action: ActionInvocation,
    /// Text the policy wrote before the chosen action.
    pub thought: Option<String>,
    /// Candidate selection fell back to the first candidate.
    pub fallback: bool,
    /// Produced by the parse-failure fallback rather than the policy.
    pub forced: bool,
}

fn forced_finish() -> Proposal {
    Proposal {
        action: ActionInvocation::new(FINISH, [("answer", "")]),
        thought: None,
        fallback: false,
        forced: true,
    }
}

/// Samples and verifies the next action.
///
/// Unreadable policy replies are re-prompted twice; after that the step
/// becomes an empty `Finish` marked as forced. Backend failures of the
/// policy propagate; verifier failures degrade inside the verifier.
pub fn next_action(
    ctx: &PolicyContext<'_>,
    traj: &Trajectory,
    backend: &dyn Backend,
) -> Result<Proposal, BackendError> {
    let catalog = ctx.registry.catalog();
    let transcript = render_transcript(traj, true);
    let system = prompts::policy_system(&catalog, ctx.guidance);
    let n = match ctx.verifier.mode {
        VerifierMode::CandidateSelection => ctx.verifier.n.max(1),
        _ => 1,
    };
    let temperature = if n > 1 { CANDIDATE_TEMPERATURE } else { POLICY_TEMPERATURE };
    let mut retry_note: Option<String> = None;
    for _ in 0..=POLICY_REPROMPTS {
        let req = GenerationRequest::new(
            Role::Policy,
            system.clone(),
            prompts::policy_user(ctx.task, ctx.demos, &transcript, retry_note.as_deref()),
        )
        .with_temperature(temperature)
        .with_samples(n as u32);
        let mut candidates = Vec::with_capacity(n);
        let mut thoughts = Vec::with_capacity(n);
        for reply in backend.sample(&req, n)? {
            match parse_action(&reply) {
                Ok(a) => {
                    candidates.push(a);
                    thoughts.push(leading_thought(&reply));
                }
                Err(e) => retry_note = Some(e.to_string()),
            }
        }
        if candidates.is_empty() {
            log::debug!("unreadable policy reply for {}", ctx.task.id);
            continue;
        }
        let step_ctx = StepContext {
            task: ctx.task,
            demos: ctx.demos,
            transcript: &transcript,
            catalog: &catalog,
        };
        return Ok(match ctx.verifier.mode {
            VerifierMode::None => Proposal {
                action: candidates.swap_remove(0),
                thought: thoughts.swap_remove(0),
                fallback: false,
                forced: false,
            },
            VerifierMode::IterativeRefinement => {
                let first = candidates.swap_remove(0);
                let refined = verifier::iterative_refine(&step_ctx, first, ctx.verifier.n, ctx.ledger, backend);
                Proposal {
                    action: refined.action,
                    thought: thoughts.swap_remove(0),
                    fallback: false,
                    forced: false,
                }
            }
            VerifierMode::CandidateSelection => {
                let chosen = verifier::candidate_select(&step_ctx, &candidates, ctx.ledger, backend);
                Proposal {
                    action: chosen.action,
                    thought: thoughts.swap_remove(chosen.index),
                    fallback: chosen.fallback,
                    forced: false,
                }
            }
        });
    }
    log::warn!("policy replies for {} stayed unreadable; forcing Finish", ctx.task.id);
    Ok(forced_finish())
}

/// Propose, gate, invoke until `Finish` or `max_steps`.
pub(crate) fn run_loop(
    ctx: &PolicyContext<'_>,
    max_steps: usize,
    env: &ToolEnv,
    backend: &dyn Backend,
) -> Trajectory {
    let task = ctx.task;
    let mut traj = Trajectory::new(task.id.clone());
    while traj.steps.len() < max_steps.max(1) {
        let proposal = match next_action(ctx, &traj, backend) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("task {} aborted: {e}", task.id);
                traj.outcome = Outcome::Aborted;
                return traj;
            }
        };
        let observation = ctx.registry.invoke(&proposal.action, task, backend, env);
        let finished = proposal.action.is_finish();
        let mut step = Step::new(proposal.action, observation);
        step.thought = proposal.thought;
        step.verifier_fallback = proposal.fallback;
        traj.steps.push(step);
        if finished {
            let answer = traj.steps[traj.steps.len() - 1].invocation.answer().to_string();
            traj.outcome = if proposal.forced {
                Outcome::Aborted
            } else if task.judge(&answer).matched {
                Outcome::Success
            } else {
                Outcome::Failure
            };
            traj.final_answer = Some(answer);
            return traj;
        }
    }
    traj.outcome = Outcome::BudgetExhausted;
    traj
}

/// Runs one task with a given backend: one memory retrieval, then the
/// verified step loop.
pub fn run_task_with(
    task: &TaskInstance,
    memory: &MemoryStore,
    ledger: &ExperienceLedger,
    cfg: &AgentConfig,
    registry: &ToolRegistry,
    env: &ToolEnv,
    backend: &dyn Backend,
) -> Trajectory {
    let retrieved = memory.retrieve(&task.instruction, cfg.demo_k);
    let demos = render_demos(&retrieved, cfg.prompt_budget_chars);
    let ctx = PolicyContext {
        task,
        registry,
        demos: &demos,
        ledger,
        verifier: cfg.verifier,
        guidance: None,
    };
    run_loop(&ctx, cfg.max_steps, env, backend)
}

/// Runs one task against the backend the factory hands out for it.
///
/// Only a failure to obtain the backend is an error; failures during the
/// run end the trajectory with an aborted outcome.
pub fn run_task(
    task: &TaskInstance,
    memory: &MemoryStore,
    ledger: &ExperienceLedger,
    cfg: &AgentConfig,
    deps: &Deps,
) -> Result<Trajectory, BackendError> {
    let backend = deps.backends.for_task(&task.id)?;
    Ok(run_task_with(task, memory, ledger, cfg, &deps.registry, &deps.env, backend.as_ref()))
}
