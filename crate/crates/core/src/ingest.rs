//! Chat-format trajectory files and ReAct message splitting.
//!
//! A trajectory file holds one [`ChatRecord`] per line. The first human
//! message is the task instruction; every following assistant message is a
//! `Thought:`/`Action:` turn and the human message after it is the
//! environment's observation.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::trajectory::{CriticalSelection, Dataset, Step, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[serde(alias = "user")]
    Human,
    #[serde(alias = "gpt")]
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    #[serde(alias = "from")]
    pub role: Role,
    #[serde(alias = "value")]
    pub content: String,
}

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRecord {
    #[serde(alias = "item_id")]
    pub id: String,
    #[serde(default)]
    pub environment: String,
    pub conversations: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Thought,
    Action,
}

/// Byte offsets of a `Thought:`/`Action:` label found at the start of a line.
struct LabelHit {
    label: Label,
    start: usize,
    body: usize,
}

fn find_labels(content: &str) -> Vec<LabelHit> {
    let mut hits = Vec::new();
    let mut line_start = 0;
    for line in content.split_inclusive('\n') {
        let indent = line.len() - line.trim_start_matches([' ', '\t']).len();
        let rest = &line[indent..];
        for (label, name) in [(Label::Thought, "thought:"), (Label::Action, "action:")] {
            if rest.len() >= name.len() && rest.as_bytes()[..name.len()].eq_ignore_ascii_case(name.as_bytes()) {
                let mut body = line_start + indent + name.len();
                if content[body..].starts_with(' ') {
                    body += 1;
                }
                hits.push(LabelHit { label, start: line_start + indent, body });
            }
        }
        line_start += line.len();
    }
    hits
}

/// Split an assistant message into `(thought, action)`.
///
/// Recognizes `Thought:` and `Action:` labels at the start of a line (any
/// case, optionally followed by one space). Without an `Action:` label and
/// without a `Thought:` label the whole message is the action.
pub fn parse_react_message(content: &str) -> Result<(String, String)> {
    let hits = find_labels(content);
    let action_hit = hits.iter().find(|h| h.label == Label::Action);
    let (thought, action) = match action_hit {
        Some(a) => {
            let thought = hits
                .iter()
                .find(|h| h.label == Label::Thought && h.start < a.start)
                .map(|t| content[t.body..a.start].trim().to_string())
                .unwrap_or_default();
            (thought, content[a.body..].trim().to_string())
        }
        None if hits.is_empty() => (String::new(), content.trim().to_string()),
        None => (String::new(), String::new()),
    };
    if action.is_empty() {
        return Err(Error::MalformedStep(format!("no action in {content:?}")));
    }
    Ok((thought, action))
}

/// Inverse of [`parse_react_message`] for trimmed parts.
pub fn render_react_message(thought: &str, action: &str) -> String {
    if thought.is_empty() {
        format!("Action:\n{action}")
    } else {
        format!("Thought:\n{thought}\nAction:\n{action}")
    }
}

pub fn chat_to_trajectory(r: &ChatRecord) -> Result<Trajectory> {
    let malformed = |reason: String| Error::MalformedRecord { id: r.id.clone(), reason };
    let mut messages = r.conversations.iter().enumerate();
    let instruction = match messages.next() {
        Some((_, m)) if m.role == Role::Human => m.content.clone(),
        Some(_) => return Err(malformed("first message is not from the human role".into())),
        None => return Err(malformed("no messages".into())),
    };
    let mut steps: Vec<Step> = Vec::new();
    let mut expect = Role::Assistant;
    for (pos, m) in messages {
        if m.role != expect {
            return Err(malformed(format!("message {pos}: roles must alternate, got two {:?} in a row", m.role)));
        }
        match m.role {
            Role::Assistant => {
                let (thought, action) =
                    parse_react_message(&m.content).map_err(|e| malformed(format!("message {pos}: {e}")))?;
                steps.push(Step { index: steps.len(), thought, action, observation: String::new() });
                expect = Role::Human;
            }
            Role::Human => {
                if let Some(last) = steps.last_mut() {
                    last.observation = m.content.clone();
                }
                expect = Role::Assistant;
            }
        }
    }
    if steps.is_empty() {
        return Err(malformed("no assistant turns".into()));
    }
    if let Some(reward) = r.reward {
        if !(0.0..=1.0).contains(&reward) {
            return Err(malformed(format!("reward {reward} out of [0,1]")));
        }
    }
    Ok(Trajectory { id: r.id.clone(), environment: r.environment.clone(), instruction, steps, final_reward: r.reward })
}

pub fn trajectory_to_chat(t: &Trajectory) -> ChatRecord {
    let mut conversations = vec![Message { role: Role::Human, content: t.instruction.clone() }];
    let last = t.steps.len().saturating_sub(1);
    for (i, step) in t.steps.iter().enumerate() {
        conversations
            .push(Message { role: Role::Assistant, content: render_react_message(&step.thought, &step.action) });
        if i != last || !step.observation.is_empty() {
            conversations.push(Message { role: Role::Human, content: step.observation.clone() });
        }
    }
    ChatRecord { id: t.id.clone(), environment: t.environment.clone(), conversations, reward: t.final_reward }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let records = jsonl::read::<ChatRecord>(path)?;
    let mut seen = HashSet::new();
    let mut trajectories = Vec::with_capacity(records.len());
    for (line, record) in records {
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId { path: path.to_path_buf(), line, id: record.id });
        }
        let t = chat_to_trajectory(&record).map_err(|e| match e {
            Error::MalformedRecord { id, reason } => {
                Error::MalformedRecord { id, reason: format!("line {line}: {reason}") }
            }
            other => other,
        })?;
        trajectories.push(t);
    }
    Ok(Dataset::new(trajectories))
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let records: Vec<ChatRecord> = d.trajectories.iter().map(trajectory_to_chat).collect();
    jsonl::write(path, &records)
}

pub fn load_selections(path: &Path) -> Result<Vec<CriticalSelection>> {
    let rows = jsonl::read::<CriticalSelection>(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, s) in rows {
        if !seen.insert(s.trajectory_id.clone()) {
            return Err(Error::DuplicateId { path: path.to_path_buf(), line, id: s.trajectory_id });
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_selections(selections: &[CriticalSelection], path: &Path) -> Result<()> {
    jsonl::write(path, selections)
}
