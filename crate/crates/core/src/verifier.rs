//! Per-step action verification guided by tool-wise experience.
//!
//! Two strategies: iterative refinement rewrites the proposed action up to
//! `n` times and stops as soon as a rewrite repeats its predecessor;
//! candidate selection samples `n` actions and lets the verifier pick one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationRequest, Role};
use crate::experience::ExperienceLedger;
use crate::model::{parse_action, ActionInvocation, TaskInstance};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierMode {
    None,
    IterativeRefinement,
    CandidateSelection,
}

impl VerifierMode {
    pub fn short_name(self) -> &'static str {
        match self {
            VerifierMode::None => "none",
            VerifierMode::IterativeRefinement => "refine",
            VerifierMode::CandidateSelection => "select",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub mode: VerifierMode,
    /// Refinement budget or candidate-list size.
    pub n: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl VerifierConfig {
    pub fn none() -> Self {
        Self { mode: VerifierMode::None, n: 1 }
    }

    pub fn refine(n: usize) -> Self {
        Self { mode: VerifierMode::IterativeRefinement, n: n.max(1) }
    }

    pub fn select(n: usize) -> Self {
        Self { mode: VerifierMode::CandidateSelection, n: n.max(1) }
    }
}

fn canonical_params(a: &ActionInvocation) -> BTreeMap<&str, String> {
    a.params
        .iter()
        .map(|(k, v)| (k.as_str(), v.split_whitespace().collect::<Vec<_>>().join(" ")))
        .collect()
}

/// Same action name and same parameters after sorting keys and collapsing
/// whitespace in values. Case is significant.
pub fn actions_equal(a: &ActionInvocation, b: &ActionInvocation) -> bool {
    a.action_name == b.action_name && canonical_params(a) == canonical_params(b)
}

/// What the verifier sees besides the candidate actions.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub task: &'a TaskInstance,
    pub demos: &'a str,
    pub transcript: &'a str,
    pub catalog: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub action: ActionInvocation,
    pub calls: usize,
}

/// Refines `initial` for at most `n` rounds.
///
/// Round `j` shows the whole history `a^0..a^{j-1}` and the experience of
/// the actions in it. Returns `a^j` as soon as it equals `a^{j-1}`, else
/// `a^n`. A failed call or unreadable reply keeps the latest action.
pub fn iterative_refine(
    ctx: &StepContext<'_>,
    initial: ActionInvocation,
    n: usize,
    ledger: &ExperienceLedger,
    backend: &dyn Backend,
) -> Refined {
    let mut history = vec![initial];
    let mut calls = 0;
    for _ in 0..n.max(1) {
        let names: Vec<&str> = history.iter().map(|a| a.action_name.as_str()).collect();
        let req = GenerationRequest::new(
            Role::Refine,
            prompts::refine_system(ctx.catalog),
            prompts::refine_user(ctx.task, ctx.demos, ctx.transcript, &history, &ledger.lookup(&names)),
        );
        calls += 1;
        let next = match backend.generate(&req).map(|r| parse_action(&r)) {
            Ok(Ok(action)) => action,
            Ok(Err(e)) => {
                log::debug!("unreadable refinement: {e}");
                break;
            }
            Err(e) => {
                log::warn!("refinement call failed: {e}");
                break;
            }
        };
        let repeated = actions_equal(&next, history.last().expect("history starts non-empty"));
        history.push(next);
        if repeated {
            break;
        }
    }
    Refined {
        action: history.pop().expect("history starts non-empty"),
        calls,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub action: ActionInvocation,
    pub index: usize,
    pub fallback: bool,
    pub calls: usize,
}

/// Index of the first integer in a reply, if any.
fn parse_choice(reply: &str) -> Option<usize> {
    let digits: String = reply
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

/// Picks one of `candidates`; the result is always one of them.
///
/// Identical candidates are shown once. When only one distinct candidate
/// remains no call is made. An unreadable or out-of-range reply, or a failed
/// call, falls back to the first candidate with `fallback` set.
pub fn candidate_select(
    ctx: &StepContext<'_>,
    candidates: &[ActionInvocation],
    ledger: &ExperienceLedger,
    backend: &dyn Backend,
) -> Selected {
    assert!(!candidates.is_empty(), "candidate list must not be empty");
    let mut shown: Vec<usize> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if !shown.iter().any(|&j| actions_equal(&candidates[j], c)) {
            shown.push(i);
        }
    }
    if shown.len() == 1 {
        return Selected {
            action: candidates[0].clone(),
            index: 0,
            fallback: false,
            calls: 0,
        };
    }
    let displayed: Vec<&ActionInvocation> = shown.iter().map(|&i| &candidates[i]).collect();
    let names: Vec<&str> = candidates.iter().map(|c| c.action_name.as_str()).collect();
    let req = GenerationRequest::new(
        Role::Select,
        prompts::select_system(),
        prompts::select_user(ctx.task, ctx.demos, ctx.transcript, &displayed, &ledger.lookup(&names)),
    );
    let choice = match backend.generate(&req) {
        Ok(reply) => parse_choice(&reply).filter(|c| (1..=shown.len()).contains(c)),
        Err(e) => {
            log::warn!("selection call failed: {e}");
            None
        }
    };
    match choice {
        Some(c) => Selected {
            action: candidates[shown[c - 1]].clone(),
            index: shown[c - 1],
            fallback: false,
            calls: 1,
        },
        None => Selected {
            action: candidates[0].clone(),
            index: 0,
            fallback: true,
            calls: 1,
        },
    }
}
