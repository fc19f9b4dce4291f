//! Tool-wise experience: advice derived by contrasting a failed and a
//! successful attempt, consolidated per action.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerationRequest, Role};
use crate::model::{render_transcript, TaskInstance, Trajectory};
use crate::prompts;
use crate::toolbox::ToolRegistry;

pub const EXPERIENCE_CAP: usize = 1200;
pub const LEDGER_VERSION: u32 = 1;
/// Extra attempts after an unreadable suggestion reply.
pub const SUGGESTION_REPROMPTS: usize = 2;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperienceEntry {
    pub text: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSuggestion {
    pub action_name: String,
    pub suggestion: String,
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger io: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger format: {0}")]
    Format(String),
}

/// Per-action experience, one entry per registered action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperienceLedger {
    entries: IndexMap<String, ExperienceEntry>,
}

#[derive(Serialize, Deserialize)]
struct LedgerFile {
    version: u32,
    entries: IndexMap<String, ExperienceEntry>,
}

fn cap(text: &str) -> String {
    text.trim().chars().take(EXPERIENCE_CAP).collect()
}

impl ExperienceLedger {
    pub fn new(registry: &ToolRegistry) -> Self {
        Self {
            entries: registry
                .names()
                .map(|n| (n.to_string(), ExperienceEntry::default()))
                .collect(),
        }
    }

    pub fn get(&self, action: &str) -> Option<&ExperienceEntry> {
        self.entries.get(action)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ExperienceEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn contains(&self, action: &str) -> bool {
        self.entries.contains_key(action)
    }

    pub fn total_updates(&self) -> usize {
        self.entries.values().map(|e| e.count).sum()
    }

    /// Folds suggestions into the ledger one at a time; returns how many
    /// were merged. An entry whose merge call fails is left unchanged.
    pub fn merge(&mut self, suggestions: &[ActionSuggestion], backend: &dyn Backend) -> usize {
        let mut merged = 0;
        for s in suggestions {
            let Some(entry) = self.entries.get_mut(&s.action_name) else {
                log::warn!("dropping suggestion for unregistered action {:?}", s.action_name);
                continue;
            };
            if entry.text.is_empty() {
                entry.text = cap(&s.suggestion);
            } else {
                let req = GenerationRequest::new(
                    Role::Merge,
                    prompts::merge_system(EXPERIENCE_CAP),
                    prompts::merge_user(&s.action_name, &entry.text, &s.suggestion),
                );
                match backend.generate(&req) {
                    Ok(reply) if !reply.trim().is_empty() => entry.text = cap(&reply),
                    Ok(_) => {
                        log::warn!("empty merge reply for {:?}; entry unchanged", s.action_name);
                        continue;
                    }
                    Err(e) => {
                        log::warn!("merge for {:?} failed: {e}; entry unchanged", s.action_name);
                        continue;
                    }
                }
            }
            entry.count += 1;
            merged += 1;
        }
        merged
    }

    /// Labeled experience for the distinct `names`, in ledger order.
    pub fn lookup<S: AsRef<str>>(&self, names: &[S]) -> String {
        let wanted: BTreeSet<&str> = names.iter().map(AsRef::as_ref).collect();
        self.entries
            .iter()
            .filter(|(name, e)| wanted.contains(name.as_str()) && !e.text.is_empty())
            .map(|(name, e)| format!("[{name}] {}", e.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_json(&self) -> String {
        let file = LedgerFile {
            version: LEDGER_VERSION,
            entries: self.entries.clone(),
        };
        serde_json::to_string_pretty(&file).expect("ledger serializes")
    }

    /// Parses a ledger file; keys must all be registered actions.
    pub fn from_json(text: &str, registry: &ToolRegistry) -> Result<Self, LedgerError> {
        let file: LedgerFile =
            serde_json::from_str(text).map_err(|e| LedgerError::Format(e.to_string()))?;
        if file.version != LEDGER_VERSION {
            return Err(LedgerError::Format(format!(
                "unsupported ledger version {} (expected {LEDGER_VERSION})",
                file.version
            )));
        }
        let mut ledger = Self::new(registry);
        for (name, entry) in file.entries {
            let slot = ledger
                .entries
                .get_mut(&name)
                .ok_or_else(|| LedgerError::Format(format!("action {name:?} is not registered")))?;
            if entry.text.chars().count() > EXPERIENCE_CAP {
                return Err(LedgerError::Format(format!("experience for {name:?} exceeds the cap")));
            }
            *slot = entry;
        }
        Ok(ledger)
    }

    pub fn save(&self, path: &Path) -> Result<(), LedgerError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path, registry: &ToolRegistry) -> Result<Self, LedgerError> {
        Self::from_json(&fs::read_to_string(path)?, registry)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSuggestions {
    pub suggestions: Vec<ActionSuggestion>,
    pub malformed: usize,
    /// The reply held no usable line at all.
    pub unreadable: bool,
}

/// Reads `<ActionName>: <advice>` lines, keeping only names in `allowed`.
pub fn parse_suggestions(reply: &str, allowed: &[String]) -> ParsedSuggestions {
    let mut suggestions = Vec::new();
    let mut malformed = 0;
    let mut well_formed = 0;
    let mut explicit_none = false;
    for line in reply.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        if line.eq_ignore_ascii_case("none") {
            explicit_none = true;
            continue;
        }
        let Some((name, advice)) = line.split_once(':') else {
            malformed += 1;
            continue;
        };
        let name = name.trim().trim_start_matches(['-', '*']).trim();
        let advice = advice.trim();
        if name.is_empty() || advice.is_empty() || name.contains(char::is_whitespace) {
            malformed += 1;
            continue;
        }
        well_formed += 1;
        if !allowed.iter().any(|a| a == name) {
            log::warn!("dropping suggestion for action {name:?} not used in either trajectory");
            continue;
        }
        suggestions.push(ActionSuggestion {
            action_name: name.to_string(),
            suggestion: advice.to_string(),
        });
    }
    ParsedSuggestions {
        suggestions,
        malformed,
        unreadable: well_formed == 0 && !explicit_none,
    }
}

/// Asks the backend for per-action advice by contrasting `first` (failed)
/// with `second` (successful). Restricted to registered actions that occur
/// in either trajectory. Unreadable replies are re-prompted twice before
/// giving up with no suggestions.
pub fn derive_suggestions(
    task: &TaskInstance,
    first: &Trajectory,
    second: &Trajectory,
    registry: &ToolRegistry,
    backend: &dyn Backend,
) -> Result<Vec<ActionSuggestion>, BackendError> {
    let mut allowed = first.action_names();
    for name in second.action_names() {
        if !allowed.contains(&name) {
            allowed.push(name);
        }
    }
    allowed.retain(|n| registry.contains(n));
    let req = GenerationRequest::new(
        Role::Suggest,
        prompts::suggest_system(),
        prompts::suggest_user(
            task,
            &render_transcript(first, true),
            &render_transcript(second, true),
            &task.gold,
            &allowed,
        ),
    );
    for attempt in 0..=SUGGESTION_REPROMPTS {
        let reply = backend.generate(&req)?;
        let parsed = parse_suggestions(&reply, &allowed);
        if !parsed.unreadable {
            if parsed.malformed > 0 {
                log::warn!("{} malformed suggestion lines skipped", parsed.malformed);
            }
            return Ok(parsed.suggestions);
        }
        log::warn!("unreadable suggestion reply (attempt {})", attempt + 1);
    }
    Ok(Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::model::{ActionInvocation, Observation, Outcome, Step};
    use crate::toolbox::default_registry;

    fn traj(actions: &[&str], outcome: Outcome) -> Trajectory {
        let mut t = Trajectory::new("t");
        for a in actions {
            t.steps.push(Step::new(ActionInvocation::new(*a, [("input", "x")]), Observation::ok("o")));
        }
        t.outcome = outcome;
        t
    }

    fn allowed(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_single_line() {
        let p = parse_suggestions("Calculator: verify operand units before evaluating", &allowed(&["Calculator"]));
        assert_eq!(p.suggestions.len(), 1);
        assert_eq!(p.suggestions[0].suggestion, "verify operand units before evaluating");
    }

    #[test]
    fn unknown_name_dropped() {
        let p = parse_suggestions("Oracle: ask it", &allowed(&["Calculator"]));
        assert!(p.suggestions.is_empty());
        assert!(!p.unreadable);
    }

    #[test]
    fn malformed_line_skipped() {
        let reply = "```\nCalculator: check units\nthis line has no separator\nFinish: give a number only\n```";
        let p = parse_suggestions(reply, &allowed(&["Calculator", "Finish"]));
        assert_eq!(p.suggestions.len(), 2);
        assert_eq!(p.malformed, 1);
        // Oracle: count lines with a colon whose head is a single allowed word.
        let oracle = reply
            .lines()
            .filter_map(|l| l.split_once(':'))
            .filter(|(n, a)| ["Calculator", "Finish"].contains(&n.trim()) && !a.trim().is_empty())
            .count();
        assert_eq!(p.suggestions.len(), oracle);
    }

    #[test]
    fn derive_reprompts_then_gives_up() {
        let r = default_registry();
        let task = TaskInstance::new("t", "q", "a");
        let c1 = traj(&["Calculator", "Finish"], Outcome::Failure);
        let c2 = traj(&["Calculator", "Finish"], Outcome::Success);
        let b = ScriptedBackend::from_replies([
            (Role::Suggest, vec!["gibberish"]),
            (Role::Suggest, vec!["still nothing"]),
            (Role::Suggest, vec!["no"]),
        ]);
        assert!(derive_suggestions(&task, &c1, &c2, &r, &b).unwrap().is_empty());
        assert_eq!(b.calls().len(), 3);

        let b = ScriptedBackend::from_replies([
            (Role::Suggest, vec!["gibberish"]),
            (Role::Suggest, vec!["Calculator: use parentheses\nThink: be brief"]),
        ]);
        let s = derive_suggestions(&task, &c1, &c2, &r, &b).unwrap();
        // Think never appears in either trajectory.
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].action_name, "Calculator");
    }

    #[test]
    fn merge_pass_through_and_consolidation() {
        let r = default_registry();
        let mut ledger = ExperienceLedger::new(&r);
        let s = |a: &str, t: &str| ActionSuggestion {
            action_name: a.into(),
            suggestion: t.into(),
        };
        let empty = ScriptedBackend::default();
        assert_eq!(ledger.merge(&[s("Calculator", "check units")], &empty), 1);
        assert_eq!(ledger.get("Calculator").unwrap(), &ExperienceEntry { text: "check units".into(), count: 1 });
        assert!(empty.calls().is_empty());

        let long = "m".repeat(EXPERIENCE_CAP + 100);
        let b = ScriptedBackend::from_replies([(Role::Merge, vec![long.as_str()])]);
        ledger.merge(&[s("Calculator", "use parentheses")], &b);
        let e = ledger.get("Calculator").unwrap();
        assert_eq!(e.count, 2);
        assert_eq!(e.text.chars().count(), EXPERIENCE_CAP);
    }

    #[test]
    fn merge_same_action_twice_in_batch() {
        let r = default_registry();
        let mut ledger = ExperienceLedger::new(&r);
        ledger.merge(
            &[ActionSuggestion { action_name: "Finish".into(), suggestion: "seed".into() }],
            &ScriptedBackend::default(),
        );
        let b = ScriptedBackend::from_replies([(Role::Merge, vec!["m1"]), (Role::Merge, vec!["m2"])]);
        let batch = [
            ActionSuggestion { action_name: "Finish".into(), suggestion: "a".into() },
            ActionSuggestion { action_name: "Finish".into(), suggestion: "b".into() },
        ];
        assert_eq!(ledger.merge(&batch, &b), 2);
        assert_eq!(b.calls().len(), 2);
        assert!(b.calls()[1].user_prompt.contains("m1"));
        assert_eq!(ledger.get("Finish").unwrap(), &ExperienceEntry { text: "m2".into(), count: 3 });
    }

    #[test]
    fn merge_failure_leaves_entry() {
        let r = default_registry();
        let mut ledger = ExperienceLedger::new(&r);
        let seed = ActionSuggestion { action_name: "Think".into(), suggestion: "seed".into() };
        ledger.merge(std::slice::from_ref(&seed), &ScriptedBackend::default());
        let before = ledger.clone();
        let exhausted = ScriptedBackend::from_replies([(Role::Policy, vec!["x"])]);
        assert_eq!(ledger.merge(&[seed], &exhausted), 0);
        assert_eq!(ledger, before);
    }

    #[test]
    fn lookup_rules() {
        let r = default_registry();
        let mut ledger = ExperienceLedger::new(&r);
        assert_eq!(ledger.lookup(&["Calculator"]), "");
        let b = ScriptedBackend::default();
        ledger.merge(&[ActionSuggestion { action_name: "Calculator".into(), suggestion: "units".into() }], &b);
        ledger.merge(&[ActionSuggestion { action_name: "Plan".into(), suggestion: "short plans".into() }], &b);
        assert_eq!(ledger.lookup(&["Calculator"]), "[Calculator] units");
        assert_eq!(
            ledger.lookup(&["Calculator", "Plan", "Calculator", "Oracle"]),
            "[Plan] short plans\n[Calculator] units"
        );
    }

    #[test]
    fn json_round_trip_and_validation() {
        let r = default_registry();
        let mut ledger = ExperienceLedger::new(&r);
        ledger.merge(&[ActionSuggestion { action_name: "doc_rag".into(), suggestion: "needs files".into() }], &ScriptedBackend::default());
        let back = ExperienceLedger::from_json(&ledger.to_json(), &r).unwrap();
        assert_eq!(back, ledger);
        assert!(ExperienceLedger::from_json(r#"{"version":1,"entries":{"Oracle":{"text":"x","count":1}}}"#, &r).is_err());
        assert!(ExperienceLedger::from_json(r#"{"version":3,"entries":{}}"#, &r).is_err());
    }
}
