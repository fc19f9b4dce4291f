//! Prompt templates for every backend role.

use crate::model::{ActionInvocation, TaskInstance};

const FORMAT_DEMO: &str = "\
Task: What is the body mass index of a patient who weighs 70 kg and is 1.75 m tall?
Thought: I should lay out the steps first.
Action: Plan[input=1. Compute 70 / 1.75^2 with the Calculator. 2. Report the value.]
Observation: OK. Continue.
Thought: Now compute the index.
Action: Calculator[input=70/1.75^2]
Observation: 22.85714286
Thought: I have the answer.
Action: Finish[answer=22.86]
Observation: Task finished.";

const GRAMMAR_RULES: &str = "\
Reply with an optional `Thought:` line followed by exactly one line of the form
`Action: <ToolName>[key=value; key=value]`. A bare payload such as `Think[...]`
is read as the `input` parameter. Quote values containing `;` or brackets with
double quotes. End the task with `Action: Finish[answer=<your answer>]`.";

/// Text shown for a task: instruction plus a summary of its attachments.
pub fn task_block(task: &TaskInstance) -> String {
    let att = &task.attachments;
    let list = |items: &[String]| {
        if items.is_empty() {
            "none".to_string()
        } else {
            items.join(", ")
        }
    };
    let mut out = format!("Task: {}\n", task.instruction);
    if let Some(ctx) = &att.context_text {
        out.push_str(&format!("Context: {ctx}\n"));
    }
    out.push_str(&format!(
        "Database: {}\n",
        att.table_store_ref.as_deref().unwrap_or("none")
    ));
    out.push_str(&format!("Uploaded files: {}\n", list(&att.document_files)));
    out.push_str(&format!("Images: {}", list(&att.image_refs)));
    out
}

/// Prior failed attempt and the reflection written about it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Guidance {
    pub previous_transcript: String,
    pub suggestion: String,
}

pub fn policy_system(catalog: &str, guidance: Option<&Guidance>) -> String {
    let mut out = format!(
        "You are a clinical assistant that solves tasks step by step by calling tools.\n\n\
         Available actions:\n{catalog}\n\n{GRAMMAR_RULES}\n\n\
         Example of the expected format:\n{FORMAT_DEMO}\n"
    );
    if let Some(g) = guidance {
        out.push_str(&format!(
            "\nYou already attempted this task once and did not reach the correct answer.\n\
             Previous attempt:\n{}\nAdvice for this attempt:\n{}\n",
            or_none(&g.previous_transcript),
            g.suggestion
        ));
    }
    out
}

pub fn policy_user(task: &TaskInstance, demos: &str, transcript: &str, retry_note: Option<&str>) -> String {
    let mut out = String::new();
    if !demos.is_empty() {
        out.push_str("Solved tasks similar to this one:\n");
        out.push_str(demos);
        out.push_str("\n\n");
    }
    out.push_str(&task_block(task));
    out.push_str("\n\nSteps so far:\n");
    out.push_str(or_none(transcript));
    if let Some(note) = retry_note {
        out.push_str(&format!(
            "\n\nYour previous reply could not be read ({note}). Follow the action format exactly."
        ));
    }
    out.push_str("\n\nGive the next action.");
    out
}

pub fn reflect_system() -> &'static str {
    "You review a failed attempt at a task. Compare the attempt with the correct \
     answer, find where tool choice or tool usage went wrong, and write concise advice \
     for a second attempt. Do not state the correct answer itself."
}

pub fn reflect_user(task: &TaskInstance, transcript: &str, predicted: Option<&str>, gold: &str) -> String {
    format!(
        "{}\n\nAttempt:\n{}\nPredicted answer: {}\nCorrect answer: {gold}\n\nAdvice:",
        task_block(task),
        or_none(transcript),
        predicted.unwrap_or("(none)")
    )
}

pub fn suggest_system() -> &'static str {
    "You compare a failed and a successful attempt at the same task and derive advice \
     per action. Consider each action that appears in either attempt. Reply with one \
     line per action in the form `<ActionName>: <advice>`, optionally inside a code \
     fence, and nothing else. Reply NONE if no action deserves advice."
}

pub fn suggest_user(
    task: &TaskInstance,
    first: &str,
    second: &str,
    gold: &str,
    actions: &[String],
) -> String {
    format!(
        "{}\nCorrect answer: {gold}\n\nFailed attempt:\n{}\nSuccessful attempt:\n{}\n\
         Actions to consider: {}",
        task_block(task),
        or_none(first),
        or_none(second),
        actions.join(", ")
    )
}

pub fn merge_system(cap: usize) -> String {
    format!(
        "You maintain usage notes for one tool. Merge the existing notes and a new piece \
         of advice into a single consolidated note of at most {cap} characters. Keep every \
         distinct point, drop repetition, and reply with the note only."
    )
}

pub fn merge_user(action: &str, existing: &str, suggestion: &str) -> String {
    format!("Tool: {action}\nExisting notes:\n{existing}\nNew advice:\n{suggestion}")
}

fn context_section(task: &TaskInstance, demos: &str, transcript: &str) -> String {
    let mut out = String::new();
    if !demos.is_empty() {
        out.push_str("Solved tasks similar to this one:\n");
        out.push_str(demos);
        out.push_str("\n\n");
    }
    out.push_str(&task_block(task));
    out.push_str("\n\nSteps so far:\n");
    out.push_str(or_none(transcript));
    out
}

pub fn refine_system(catalog: &str) -> String {
    format!(
        "You check the next action an agent proposes. Use the tool notes to decide \
         whether the action is the right tool with the right parameters. If it is, \
         repeat it unchanged; otherwise write an improved action.\n\n\
         Available actions:\n{catalog}\n\n{GRAMMAR_RULES}"
    )
}

pub fn refine_user(
    task: &TaskInstance,
    demos: &str,
    transcript: &str,
    history: &[ActionInvocation],
    experience: &str,
) -> String {
    let proposals = history
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {}", i, a.render()))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "{}\n\nProposed actions so far (latest last):\n{proposals}\n\nTool notes:\n{}\n\n\
         Reply with the action to take.",
        context_section(task, demos, transcript),
        or_none(experience)
    )
}

pub fn select_system() -> &'static str {
    "You choose the most effective next action among numbered candidates, using the \
     tool notes. Reply with the number of the chosen candidate only."
}

pub fn select_user(
    task: &TaskInstance,
    demos: &str,
    transcript: &str,
    candidates: &[&ActionInvocation],
    experience: &str,
) -> String {
    let listed = candidates
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {}", i + 1, a.render()))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "{}\n\nCandidates:\n{listed}\n\nTool notes:\n{}\n\nChosen candidate number:",
        context_section(task, demos, transcript),
        or_none(experience)
    )
}

pub fn query_system() -> &'static str {
    "Translate the request into one query of this form and reply with the query only:\n\
     SELECT <column | COUNT | AVG(column) | MIN(column) | MAX(column)> FROM <table> \
     [WHERE <column> = <value> [AND <column> = <value>]]\n\
     Quote text values with single quotes."
}

pub fn query_user(request: &str, schema: &str, last_error: Option<&(String, String)>) -> String {
    let mut out = format!("Tables:\n{schema}\n\nRequest: {request}");
    if let Some((query, error)) = last_error {
        out.push_str(&format!(
            "\n\nThe previous query failed.\nQuery: {query}\nError: {error}\nWrite a corrected query."
        ));
    }
    out
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none)\n"
    } else {
        s
    }
}
