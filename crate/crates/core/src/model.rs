//! Domain types shared by every stage, the action grammar, and answer matching.

use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Names of the inner actions every registry must carry.
pub const PLAN: &str = "Plan";
pub const THINK: &str = "Think";
pub const FINISH: &str = "Finish";
pub const INNER_ACTIONS: [&str; 3] = [PLAN, THINK, FINISH];

pub fn is_inner_action(name: &str) -> bool {
    INNER_ACTIONS.contains(&name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCategory {
    Inner,
    Knowledge,
    Multimodal,
    Numerical,
    Data,
}

/// Input modality a tool needs to be present on the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    None,
    Image,
    TableStore,
    DocumentFiles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub category: ToolCategory,
    pub required_modalities: BTreeSet<Modality>,
}

impl ToolDescriptor {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        category: ToolCategory,
        required: &[Modality],
    ) -> Self {
        let mut required_modalities: BTreeSet<Modality> = required.iter().copied().collect();
        if required_modalities.is_empty() {
            required_modalities.insert(Modality::None);
        }
        Self {
            name: name.into(),
            description: description.into(),
            category,
            required_modalities,
        }
    }

    /// The line this tool contributes to the catalog prompt.
    pub fn catalog_line(&self) -> String {
        format!("{}: {}", self.name, self.description)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty action text")]
    Empty,
    #[error("no `Action:` line found")]
    MissingAction,
    #[error("action name is empty")]
    EmptyName,
    #[error("expected `[` after action name `{0}`")]
    MissingPayload(String),
    #[error("unbalanced brackets in action payload")]
    Unbalanced,
    #[error("unterminated quoted value")]
    UnterminatedQuote,
}

/// One parsed agent action with its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionInvocation {
    pub action_name: String,
    pub params: IndexMap<String, String>,
    pub raw_text: String,
}

impl ActionInvocation {
    pub fn new<K, V>(name: impl Into<String>, params: impl IntoIterator<Item = (K, V)>) -> Self
    where
        K: Into<String>,
        V: Into<String>,
    {
        let mut inv = Self {
            action_name: name.into(),
            params: params
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            raw_text: String::new(),
        };
        inv.raw_text = inv.render();
        inv
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    /// The `input` parameter, or the first parameter when `input` is absent.
    pub fn primary_input(&self) -> &str {
        self.param("input")
            .or_else(|| self.params.values().next().map(String::as_str))
            .unwrap_or("")
    }

    pub fn is_finish(&self) -> bool {
        self.action_name == FINISH
    }

    /// Final answer carried by a Finish action.
    pub fn answer(&self) -> &str {
        self.param("answer").unwrap_or_else(|| self.primary_input())
    }

    /// Canonical single-action rendering, `Action: Name[k=v; k=v]`.
    pub fn render(&self) -> String {
        let payload = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={}", render_value(v)))
            .collect::<Vec<_>>()
            .join("; ");
        format!("Action: {}[{}]", self.action_name, payload)
    }

    /// Whether name and parameters agree, ignoring the raw emission.
    pub fn same_call(&self, other: &Self) -> bool {
        self.action_name == other.action_name && self.params == other.params
    }
}

impl fmt::Display for ActionInvocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn needs_quoting(value: &str) -> bool {
    value.trim() != value
        || value
            .chars()
            .any(|c| matches!(c, ';' | '"' | '\\' | '[' | ']'))
}

fn render_value(value: &str) -> String {
    if !needs_quoting(value) {
        return value.to_string();
    }
    let mut out = String::with_capacity(value.len() + 2);
    out.push('"');
    for c in value.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Parses the first `Action: Name[payload]` in `raw`.
///
/// The payload may span lines. Double-quoted regions (with `\"` and `\\`
/// escapes) are opaque to bracket matching and to `;` splitting.
pub fn parse_action(raw: &str) -> Result<ActionInvocation, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let start = find_action_marker(raw).ok_or(ParseError::MissingAction)?;
    let rest = &raw[start..];
    let open = rest.find('[');
    let line_end = rest.find('\n').unwrap_or(rest.len());
    let name_end = match open {
        Some(i) if i < line_end => i,
        _ => {
            let name = rest[..line_end].trim();
            if name.is_empty() {
                return Err(ParseError::EmptyName);
            }
            return Err(ParseError::MissingPayload(name.to_string()));
        }
    };
    let name = rest[..name_end].trim();
    if name.is_empty() {
        return Err(ParseError::EmptyName);
    }
    let payload_start = name_end + 1;
    let close = matching_bracket(&rest[payload_start..])?;
    let payload = &rest[payload_start..payload_start + close];
    Ok(ActionInvocation {
        action_name: name.to_string(),
        params: parse_payload(payload)?,
        raw_text: raw.to_string(),
    })
}

/// Whatever precedes the `Action:` line, or `None` when that is blank.
pub fn leading_thought(raw: &str) -> Option<String> {
    let start = find_action_marker(raw)?;
    let head = &raw[..start - "Action:".len()];
    let head = head.trim();
    (!head.is_empty()).then(|| head.to_string())
}

fn find_action_marker(raw: &str) -> Option<usize> {
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if let Some(after) = trimmed.strip_prefix("Action:") {
            let lead = line.len() - trimmed.len();
            return Some(offset + lead + (trimmed.len() - after.len()));
        }
        offset += line.len();
    }
    None
}

/// Byte offset of the `]` closing an already-consumed `[`.
fn matching_bracket(s: &str) -> Result<usize, ParseError> {
    let mut depth = 0usize;
    let mut in_quote = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_quote = false;
            }
            continue;
        }
        match c {
            '"' => in_quote = true,
            '[' => depth += 1,
            ']' if depth == 0 => return Ok(i),
            ']' => depth -= 1,
            _ => {}
        }
    }
    if in_quote {
        Err(ParseError::UnterminatedQuote)
    } else {
        Err(ParseError::Unbalanced)
    }
}

fn split_top_level(payload: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut in_quote = false;
    let mut escaped = false;
    let mut last = 0;
    for (i, c) in payload.char_indices() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_quote = false;
            }
            continue;
        }
        match c {
            '"' => in_quote = true,
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            ';' if depth == 0 => {
                parts.push(&payload[last..i]);
                last = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&payload[last..]);
    parts
}

/// Splits `key=value` when the segment starts with an identifier and `=`.
fn split_key(segment: &str) -> Option<(&str, &str)> {
    let trimmed = segment.trim_start();
    let eq = trimmed.find('=')?;
    let key = trimmed[..eq].trim_end();
    let mut chars = key.chars();
    let first = chars.next()?;
    if !(first.is_ascii_alphabetic() || first == '_') {
        return None;
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return None;
    }
    Some((key, &trimmed[eq + 1..]))
}

fn unquote(value: &str) -> Result<String, ParseError> {
    let trimmed = value.trim();
    let Some(inner) = trimmed.strip_prefix('"') else {
        return Ok(trimmed.to_string());
    };
    let mut out = String::new();
    let mut escaped = false;
    for (i, c) in inner.char_indices() {
        if escaped {
            out.push(c);
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == '"' {
            if inner[i + 1..].trim().is_empty() {
                return Ok(out);
            }
            // Quote closes early: the value was not a quoted string after all.
            return Ok(trimmed.to_string());
        } else {
            out.push(c);
        }
    }
    Err(ParseError::UnterminatedQuote)
}

fn parse_payload(payload: &str) -> Result<IndexMap<String, String>, ParseError> {
    let mut params = IndexMap::new();
    if payload.trim().is_empty() {
        return Ok(params);
    }
    let segments = split_top_level(payload);
    if split_key(segments[0]).is_none() {
        params.insert("input".to_string(), unquote(payload)?);
        return Ok(params);
    }
    // Segments without a `key=` prefix belong to the previous value.
    let mut pairs: Vec<(String, String)> = Vec::new();
    for segment in segments {
        match split_key(segment) {
            Some((key, value)) => pairs.push((key.to_string(), value.to_string())),
            None => {
                if let Some(last) = pairs.last_mut() {
                    last.1.push(';');
                    last.1.push_str(segment);
                }
            }
        }
    }
    for (key, value) in pairs {
        params.insert(key, unquote(&value)?);
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationStatus {
    Ok,
    ToolError,
    SelectionError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub status: ObservationStatus,
}

impl Observation {
    pub fn ok(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            status: ObservationStatus::Ok,
        }
    }

    pub fn tool_error(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            status: ObservationStatus::ToolError,
        }
    }

    pub fn selection_error(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            status: ObservationStatus::SelectionError,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// Free text the policy wrote before its `Action:` line, kept verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    pub invocation: ActionInvocation,
    pub observation: Observation,
    /// Candidate selection fell back to the first candidate at this step.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub verifier_fallback: bool,
}

impl Step {
    pub fn new(invocation: ActionInvocation, observation: Observation) -> Self {
        Self {
            thought: None,
            invocation,
            observation,
            verifier_fallback: false,
        }
    }

    pub fn is_selection_error(&self) -> bool {
        self.observation.status == ObservationStatus::SelectionError
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    BudgetExhausted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<Step>,
    pub final_answer: Option<String>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            steps: Vec::new(),
            final_answer: None,
            outcome: Outcome::BudgetExhausted,
        }
    }

    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    pub fn is_finished(&self) -> bool {
        self.steps.last().is_some_and(|s| s.invocation.is_finish())
    }

    /// Distinct action names in order of first use.
    pub fn action_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for step in &self.steps {
            if !names.contains(&step.invocation.action_name) {
                names.push(step.invocation.action_name.clone());
            }
        }
        names
    }

    pub fn selection_error_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.is_selection_error()).count()
    }
}

/// Serializes a trajectory as `Action:`/`Observation:` line pairs.
///
/// Plan steps are skipped when `include_plan` is false.
pub fn render_transcript(traj: &Trajectory, include_plan: bool) -> String {
    render_steps(&traj.steps, include_plan)
}

pub fn render_steps(steps: &[Step], include_plan: bool) -> String {
    let mut out = String::new();
    for step in steps {
        if !include_plan && step.invocation.action_name == PLAN {
            continue;
        }
        if let Some(thought) = &step.thought {
            out.push_str(thought);
            out.push('\n');
        }
        out.push_str(&step.invocation.render());
        out.push('\n');
        out.push_str("Observation: ");
        out.push_str(&step.observation.text);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachments {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_text: Option<String>,
    #[serde(
        default,
        rename = "table_store",
        skip_serializing_if = "Option::is_none"
    )]
    pub table_store_ref: Option<String>,
    #[serde(default, rename = "files")]
    pub document_files: Vec<String>,
    #[serde(default, rename = "images")]
    pub image_refs: Vec<String>,
}

impl Attachments {
    pub fn has(&self, modality: Modality) -> bool {
        match modality {
            Modality::None => true,
            Modality::Image => !self.image_refs.is_empty(),
            Modality::TableStore => self.table_store_ref.is_some(),
            Modality::DocumentFiles => !self.document_files.is_empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Matcher {
    #[default]
    Exact,
    ChoiceLetter,
    Numeric { tol: f64 },
    SetF1 { threshold: f64 },
}

impl Matcher {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Matcher::Numeric { tol } if tol < 0.0 || !tol.is_finite() => {
                Err(format!("numeric tolerance must be finite and >= 0, got {tol}"))
            }
            Matcher::SetF1 { threshold } if !(0.0..=1.0).contains(&threshold) => {
                Err(format!("set_f1 threshold must lie in [0, 1], got {threshold}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub attachments: Attachments,
    pub gold: String,
    #[serde(default)]
    pub matcher: Matcher,
}

impl TaskInstance {
    pub fn new(id: impl Into<String>, instruction: impl Into<String>, gold: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            instruction: instruction.into(),
            attachments: Attachments::default(),
            gold: gold.into(),
            matcher: Matcher::Exact,
        }
    }

    pub fn with_matcher(mut self, matcher: Matcher) -> Self {
        self.matcher = matcher;
        self
    }

    pub fn with_attachments(mut self, attachments: Attachments) -> Self {
        self.attachments = attachments;
        self
    }

    /// Scores a predicted answer against the gold answer.
    pub fn judge(&self, predicted: &str) -> AnswerCheck {
        AnswerCheck {
            matched: match_answer(predicted, &self.gold, self.matcher).unwrap_or(false),
            predicted: predicted.to_string(),
        }
    }
}

/// Whether a trajectory's prediction equals the gold answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerCheck {
    pub matched: bool,
    pub predicted: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchError {
    #[error("cannot parse a number from {0:?}")]
    NotNumeric(String),
    #[error("invalid matcher: {0}")]
    InvalidMatcher(String),
}

pub fn match_answer(pred: &str, gold: &str, matcher: Matcher) -> Result<bool, MatchError> {
    matcher.validate().map_err(MatchError::InvalidMatcher)?;
    Ok(match matcher {
        Matcher::Exact => normalize(pred) == normalize(gold),
        Matcher::ChoiceLetter => match (choice_letter(pred), choice_letter(gold)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        },
        Matcher::Numeric { tol } => {
            let a = first_number(pred).ok_or_else(|| MatchError::NotNumeric(pred.to_string()))?;
            let b = first_number(gold).ok_or_else(|| MatchError::NotNumeric(gold.to_string()))?;
            (a - b).abs() <= tol
        }
        Matcher::SetF1 { threshold } => token_f1(pred, gold) >= threshold,
    })
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// First uppercase A-E not adjacent to another alphanumeric character.
pub fn choice_letter(s: &str) -> Option<char> {
    let chars: Vec<char> = s.chars().collect();
    chars.iter().enumerate().find_map(|(i, &c)| {
        let standalone = ('A'..='E').contains(&c)
            && (i == 0 || !chars[i - 1].is_alphanumeric())
            && chars.get(i + 1).is_none_or(|n| !n.is_alphanumeric());
        standalone.then_some(c)
    })
}

/// First decimal number in `s`, e.g. `-3.5` in "about -3.5 mg".
pub fn first_number(s: &str) -> Option<f64> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let negative = bytes[i] == b'-'
            && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit() || *b == b'.');
        let start = i;
        let mut j = if negative { i + 1 } else { i };
        let digits_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        let mut has_digits = j > digits_start;
        if j < bytes.len() && bytes[j] == b'.' {
            let frac_start = j + 1;
            let mut k = frac_start;
            while k < bytes.len() && bytes[k].is_ascii_digit() {
                k += 1;
            }
            if k > frac_start {
                has_digits = true;
                j = k;
            }
        }
        if has_digits {
            return s[start..j].trim_end_matches('.').parse().ok();
        }
        i += 1;
    }
    None
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let p: BTreeSet<String> = crate::memory::tokenize(pred).into_iter().collect();
    let g: BTreeSet<String> = crate::memory::tokenize(gold).into_iter().collect();
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let common = p.intersection(&g).count() as f64;
    if common == 0.0 {
        return 0.0;
    }
    let precision = common / p.len() as f64;
    let recall = common / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_finish() {
        let inv = parse_action("Action: Finish[answer=B]").unwrap();
        assert_eq!(inv.action_name, "Finish");
        assert_eq!(inv.param("answer"), Some("B"));
        assert_eq!(inv.params.len(), 1);
    }

    #[test]
    fn parses_after_thought() {
        let raw = "Thought: double the sum\nAction: Calculator[input=(3+4)*2]";
        let inv = parse_action(raw).unwrap();
        assert_eq!(inv.action_name, "Calculator");
        assert_eq!(inv.param("input"), Some("(3+4)*2"));
        assert_eq!(inv.raw_text, raw);
        let again = parse_action(&inv.render()).unwrap();
        assert!(again.same_call(&inv));
        assert_eq!(again.render(), inv.render());
    }

    #[test]
    fn unbalanced_is_error() {
        assert_eq!(
            parse_action("Action: Finish[answer=B"),
            Err(ParseError::Unbalanced)
        );
        assert_eq!(parse_action("Thought only"), Err(ParseError::MissingAction));
        assert_eq!(leading_thought("Thought: add first\n  Action: Think[x]").as_deref(), Some("Thought: add first"));
        assert_eq!(leading_thought("Action: Think[x]"), None);
        assert_eq!(leading_thought("no action"), None);
        assert_eq!(parse_action("  "), Err(ParseError::Empty));
        assert!(matches!(
            parse_action("Action: Finish"),
            Err(ParseError::MissingPayload(_))
        ));
    }

    #[test]
    fn bare_payload_goes_to_input() {
        let inv = parse_action("Action: Think[the dose; then the route]").unwrap();
        assert_eq!(inv.param("input"), Some("the dose; then the route"));
        let inv = parse_action("Action: structured_query[SELECT COUNT FROM t WHERE a = 'x']").unwrap();
        assert_eq!(inv.param("input"), Some("SELECT COUNT FROM t WHERE a = 'x'"));
    }

    #[test]
    fn multi_line_and_nested_payload() {
        let raw = "Action: structured_query[input=SELECT age\nFROM patients [x]; k=2]";
        let inv = parse_action(raw).unwrap();
        assert_eq!(inv.param("input"), Some("SELECT age\nFROM patients [x]"));
        assert_eq!(inv.param("k"), Some("2"));
    }

    #[test]
    fn quoted_values() {
        let inv = parse_action(r#"Action: Think[input="a ] b; c"]"#).unwrap();
        assert_eq!(inv.param("input"), Some("a ] b; c"));
        let inv = parse_action(r#"Action: Think[input="..."]"#).unwrap();
        assert_eq!(inv.param("input"), Some("..."));
    }

    #[test]
    fn continuation_segments_join_previous_value() {
        let inv = parse_action("Action: Think[input=a;b; k=1]").unwrap();
        assert_eq!(inv.param("input"), Some("a;b"));
        assert_eq!(inv.param("k"), Some("1"));
    }

    #[test]
    fn empty_payload() {
        let inv = parse_action("Action: Plan[]").unwrap();
        assert!(inv.params.is_empty());
        assert_eq!(inv.render(), "Action: Plan[]");
    }

    fn step(name: &str, input: &str, obs: &str) -> Step {
        Step::new(ActionInvocation::new(name, [("input", input)]), Observation::ok(obs))
    }

    #[test]
    fn transcript_basics() {
        let mut traj = Trajectory::new("t");
        assert_eq!(render_transcript(&traj, true), "");
        traj.steps.push(step("Think", "hm", "OK. Continue."));
        let text = render_transcript(&traj, true);
        assert_eq!(text, "Action: Think[input=hm]\nObservation: OK. Continue.\n");
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn transcript_can_skip_plan() {
        let mut traj = Trajectory::new("t");
        traj.steps.push(step("Plan", "1. compute", "OK. Continue."));
        traj.steps.push(step("Calculator", "1+1", "2"));
        let text = render_transcript(&traj, false);
        assert!(!text.contains("Plan"));
        assert!(text.contains("Calculator"));
    }

    #[test]
    fn exact_matcher() {
        assert!(match_answer("yes", "Yes ", Matcher::Exact).unwrap());
        assert!(match_answer("acute  renal\nfailure", "Acute renal failure", Matcher::Exact).unwrap());
        assert!(!match_answer("no", "yes", Matcher::Exact).unwrap());
    }

    #[test]
    fn choice_matcher() {
        assert!(match_answer("The answer is B.", "B", Matcher::ChoiceLetter).unwrap());
        assert!(!match_answer("Answer: (C)", "B", Matcher::ChoiceLetter).unwrap());
        assert!(!match_answer("none", "B", Matcher::ChoiceLetter).unwrap());
    }

    #[test]
    fn numeric_matcher() {
        let m = Matcher::Numeric { tol: 0.01 };
        assert!(match_answer("3.1416", "3.14159", m).unwrap());
        assert!(match_answer("about 35 years", "35", m).unwrap());
        assert!(!match_answer("3.2", "3.14159", m).unwrap());
        assert_eq!(
            match_answer("n/a", "3", m),
            Err(MatchError::NotNumeric("n/a".into()))
        );
        assert!(match_answer("1", "1", Matcher::Numeric { tol: -1.0 }).is_err());
    }

    #[test]
    fn set_f1_matcher() {
        let m = Matcher::SetF1 { threshold: 0.5 };
        assert!(match_answer("renal failure acute", "acute renal failure", m).unwrap());
        assert!(!match_answer("heart", "acute renal failure", m).unwrap());
    }

    #[test]
    fn first_number_forms() {
        assert_eq!(first_number("x = -2.5 mg"), Some(-2.5));
        assert_eq!(first_number("35."), Some(35.0));
        assert_eq!(first_number(".5"), Some(0.5));
        assert_eq!(first_number("a-b"), None);
    }

    #[test]
    fn matcher_json_shape() {
        let m: Matcher = serde_json::from_str(r#"{"kind":"numeric","tol":0.5}"#).unwrap();
        assert_eq!(m, Matcher::Numeric { tol: 0.5 });
        let m: Matcher = serde_json::from_str(r#"{"kind":"set_f1","threshold":0.8}"#).unwrap();
        assert_eq!(m, Matcher::SetF1 { threshold: 0.8 });
        let m: Matcher = serde_json::from_str(r#"{"kind":"choice_letter"}"#).unwrap();
        assert_eq!(m, Matcher::ChoiceLetter);
    }

    fn value_strategy() -> impl Strategy<Value = String> {
        proptest::string::string_regex(r#"[a-zA-Z0-9 ;=\[\]"\\().+*\n-]{0,16}"#).unwrap()
    }

    proptest! {
        #[test]
        fn render_parse_fixpoint(
            name in "[A-Za-z_][A-Za-z0-9_]{0,10}",
            pairs in proptest::collection::vec(("[a-z_][a-z0-9_]{0,6}", value_strategy()), 0..4),
        ) {
            let inv = ActionInvocation::new(name, pairs);
            let parsed = parse_action(&inv.render()).unwrap();
            let reparsed = parse_action(&parsed.render()).unwrap();
            prop_assert!(reparsed.same_call(&parsed));
            prop_assert_eq!(reparsed.render(), parsed.render());
        }

        #[test]
        fn parse_is_fixpoint_on_arbitrary_text(raw in r#"(Thought: [a-z ]{0,10}\n)?Action: [A-Za-z]{1,8}\[[a-z0-9 =;"\[\]\n]{0,24}\]"#) {
            if let Ok(first) = parse_action(&raw) {
                let second = parse_action(&first.render()).unwrap();
                prop_assert!(second.same_call(&first));
            }
        }

        #[test]
        fn exact_and_numeric_are_symmetric(a in "[a-zA-Z0-9 .-]{0,12}", b in "[a-zA-Z0-9 .-]{0,12}", tol in 0.0f64..2.0) {
            prop_assert_eq!(
                match_answer(&a, &b, Matcher::Exact).unwrap(),
                match_answer(&b, &a, Matcher::Exact).unwrap()
            );
            let m = Matcher::Numeric { tol };
            prop_assert_eq!(match_answer(&a, &b, m).ok(), match_answer(&b, &a, m).ok());
        }
    }
}
