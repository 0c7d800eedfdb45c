//! Critical-step selection by an external chat model.
//!
//! The model sees the whole expert trajectory as a numbered conversation
//! (`conversation[1]`, `conversation[2]`, ...) and answers in a fixed
//! three-part format. Labels are 1-based in the prompt and converted to
//! 0-based step indices on the way back.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::trajectory::{selection_cap, CriticalSelection, StepCategory, Strategy, Trajectory};

pub const PLAN_MARKER: &str = "The high-level plan is:";
pub const STEPS_MARKER: &str = "The critical steps are:";
pub const REASON_MARKER: &str = "Reason:";

pub const DEFAULT_API_KEY_ENV: &str = "CRITSEL_API_KEY";

const DEFINITION: &str = "A critical step is defined as a key action or decision that, if performed correctly, \
significantly increases the likelihood of successfully completing the task. It represents a turning point in the \
process that influences the outcome of subsequent actions. More specifically, critical steps include:";

const CATEGORY_DEFINITIONS: [(StepCategory, &str); 4] = [
    (
        StepCategory::PlanCreation,
        "Steps where the LLM agent formulates sub-goals by analyzing previous observations and considering the \
final objective, breaking down the larger goal into manageable tasks that guide the agent's actions towards the \
overall outcome.",
    ),
    (
        StepCategory::CriticalObservation,
        "Steps where the LLM agent identifies and analyzes key information from the environment, which help agent \
understand the objective or state and refine its strategy and decision-making towards more effective outcomes.",
    ),
    (
        StepCategory::CriticalAction,
        "Steps where the LLM agent takes decisive and impactful actions based on prior observations, significantly \
advancing the process toward the final objectives. These actions are crucial in shaping the direction of the \
agent's strategy and are often pivotal moments that determine progress or failure, ensuring that the agent remains \
on track to achieve the desired outcome.",
    ),
    (
        StepCategory::SelfCorrection,
        "Steps where the LLM agent carefully recalls and assesses its previous actions or decisions, especially \
after encountering failure or suboptimal outcomes. During this process, the agent reflects on what went wrong, \
identifies areas for improvement, and adjusts its approach to enhance future performance, which helps the agent \
refine its decision-making and better align with the overall objective.",
    ),
];

/// `{cap}` is replaced by the selection cap.
const TASK_TEMPLATE: &str = "Task Description:
Your task is:
1. Induce a high-level plan or strategy based on the expert conversation, summarizing the key steps needed to successfully complete the task.
2. Based on this high-level plan, identify the most critical action steps in the expert conversation. A maximum of {cap} steps may be chosen from the conversation.
3. Provide a detailed explanation for choosing these critical steps, specifying which category (e.g., key observation, planning, recall, pivotal action) they belong to and why mastering these steps ensures the success of the task.

Answer Format:
1. The high-level plan is: [Summarize the strategy and key steps for task completion]
2. The critical steps are: conversation[...]
3. Reason: [Explain why these steps are critical, including which category they fall into (key observation, planning, recall, pivotal action) and how they enable the player to avoid mistakes in subsequent steps]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorPromptConfig {
    /// Maximum selection ratio.
    pub ratio: f64,
    /// Observations longer than this many characters are cut.
    pub observation_limit: usize,
}

impl Default for SelectorPromptConfig {
    fn default() -> Self {
        SelectorPromptConfig { ratio: 0.3, observation_limit: 2000 }
    }
}

impl SelectorPromptConfig {
    pub fn template() -> &'static str {
        TASK_TEMPLATE
    }

    pub fn category_definitions() -> &'static [(StepCategory, &'static str)] {
        &CATEGORY_DEFINITIONS
    }
}

fn truncate_chars(text: &str, limit: usize) -> String {
    match text.char_indices().nth(limit) {
        Some((cut, _)) => format!("{}...[truncated]", &text[..cut]),
        None => text.to_string(),
    }
}

pub fn build_prompt(t: &Trajectory, cfg: &SelectorPromptConfig) -> Result<String> {
    let cap = selection_cap(cfg.ratio, t.len())?;
    let mut out = String::new();
    out.push_str(DEFINITION);
    out.push('\n');
    for (category, text) in CATEGORY_DEFINITIONS {
        out.push_str(&format!("- {}: {}\n", category.display_name(), text));
    }
    out.push('\n');
    out.push_str(&TASK_TEMPLATE.replace("{cap}", &cap.to_string()));
    out.push_str(&format!(
        "\n\nThe expert conversation below has {} steps; the number of critical steps you choose does not exceed {}.\n\n",
        t.len(),
        cap
    ));
    out.push_str("Task instruction:\n");
    out.push_str(&t.instruction);
    out.push('\n');
    for step in &t.steps {
        out.push_str(&format!("\nconversation[{}]:\n", step.index + 1));
        out.push_str(&format!("Thought: {}\n", step.thought));
        out.push_str(&format!("Action: {}\n", step.action));
        out.push_str(&format!("Observation: {}\n", truncate_chars(&step.observation, cfg.observation_limit)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorResponse {
    pub raw: String,
    pub plan_summary: String,
    /// Ascending, 0-based.
    pub indices: Vec<usize>,
    /// 0-based indices in the order the model listed them.
    pub listed: Vec<usize>,
    pub categories: BTreeMap<usize, StepCategory>,
    pub truncated: bool,
    /// 1-based labels that were outside `1..=T` and dropped.
    pub dropped: Vec<usize>,
}

fn mention_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)conversation\s*\[([^\]]*)\]").unwrap())
}

fn label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+)(?:\s*(?:-|–|—|to)\s*(\d+))?$").unwrap())
}

/// A line holding only a list enumerator such as `3.`.
fn enumerator_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[\s*]*\d+\.[\s*]*$").unwrap())
}

fn bare_number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(\d+)(?:\s*(?:-|–)\s*(\d+))?\b").unwrap())
}

/// 1-based labels named inside one `conversation[...]` bracket, in order.
fn labels_in_bracket(inner: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for part in inner.split(',') {
        if let Some(c) = label_regex().captures(part.trim()) {
            push_range(&mut out, &c[1], c.get(2).map(|m| m.as_str()));
        }
    }
    out
}

fn push_range(out: &mut Vec<usize>, a: &str, b: Option<&str>) {
    let Ok(a) = a.parse::<usize>() else { return };
    match b.and_then(|b| b.parse::<usize>().ok()) {
        Some(b) => out.extend(a.min(b)..=a.max(b)),
        None => out.push(a),
    }
}

fn find_ci(haystack_lower: &str, needle: &str, from: usize) -> Option<usize> {
    haystack_lower[from..].find(&needle.to_ascii_lowercase()).map(|p| p + from)
}

const CATEGORY_KEYWORDS: [(&str, StepCategory); 10] = [
    ("plan creation", StepCategory::PlanCreation),
    ("planning", StepCategory::PlanCreation),
    ("plan formulation", StepCategory::PlanCreation),
    ("critical observation", StepCategory::CriticalObservation),
    ("key observation", StepCategory::CriticalObservation),
    ("critical action", StepCategory::CriticalAction),
    ("pivotal action", StepCategory::CriticalAction),
    ("self correction", StepCategory::SelfCorrection),
    ("self-correction", StepCategory::SelfCorrection),
    ("recall", StepCategory::SelfCorrection),
];

fn clean_plan(text: &str) -> String {
    let trimmed = text.trim_matches(|c: char| c.is_whitespace() || c == '*');
    let mut lines: Vec<&str> = trimmed.lines().collect();
    // Drop a dangling enumerator such as "2." left before the next section.
    if let Some(last) = lines.last() {
        let l = last.trim().trim_matches('*').trim();
        if l.is_empty() || l.trim_end_matches('.').chars().all(|c| c.is_ascii_digit()) || l == "-" {
            lines.pop();
        }
    }
    lines.join("\n").trim_matches(|c: char| c.is_whitespace() || c == '*').to_string()
}

/// Assign a category to each mentioned index from the keyword nearest to it.
///
/// Mentions joined only by punctuation or "and" form one group sharing the
/// keyword that lies between the previous and the next group.
fn extract_categories(reason: &str, num_steps: usize) -> BTreeMap<usize, StepCategory> {
    let lower = reason.to_ascii_lowercase();
    let mut keywords: Vec<(usize, StepCategory)> = Vec::new();
    for (kw, cat) in CATEGORY_KEYWORDS {
        let mut from = 0;
        while let Some(p) = find_ci(&lower, kw, from) {
            keywords.push((p, cat));
            from = p + kw.len();
        }
    }
    keywords.sort_by_key(|&(p, _)| p);

    struct Group {
        start: usize,
        end: usize,
        labels: Vec<usize>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for m in mention_regex().captures_iter(reason) {
        let whole = m.get(0).unwrap();
        let labels = labels_in_bracket(&m[1]);
        let joined = groups.last().is_some_and(|g| {
            let gap = lower[g.end..whole.start()].trim_matches(|c: char| c.is_whitespace() || ",;&/".contains(c));
            gap.is_empty() || gap == "and"
        });
        match groups.last_mut() {
            Some(g) if joined => {
                g.end = whole.end();
                g.labels.extend(labels);
            }
            _ => groups.push(Group { start: whole.start(), end: whole.end(), labels }),
        }
    }

    let mut out = BTreeMap::new();
    for (gi, g) in groups.iter().enumerate() {
        let lo = if gi == 0 { 0 } else { groups[gi - 1].end };
        let hi = groups.get(gi + 1).map_or(reason.len(), |n| n.start);
        let nearest = keywords.iter().filter(|(p, _)| *p >= lo && *p < hi).min_by_key(|(p, _)| {
            if *p < g.start {
                g.start - p
            } else {
                p.saturating_sub(g.end)
            }
        });
        if let Some(&(_, cat)) = nearest {
            for &k in &g.labels {
                if (1..=num_steps).contains(&k) {
                    out.entry(k - 1).or_insert(cat);
                }
            }
        }
    }
    out
}

/// Parse a selector answer for a trajectory of `num_steps` steps.
pub fn parse_response(raw: &str, num_steps: usize) -> Result<SelectorResponse> {
    let lower = raw.to_ascii_lowercase();
    let steps_at = find_ci(&lower, STEPS_MARKER, 0)
        .ok_or_else(|| Error::UnparseableResponse(format!("missing {STEPS_MARKER:?}")))?;
    let steps_body = steps_at + STEPS_MARKER.len();
    let reason_at = find_ci(&lower, REASON_MARKER, steps_body);
    let segment = &raw[steps_body..reason_at.unwrap_or(raw.len())];

    let plan_summary = find_ci(&lower[..steps_at], PLAN_MARKER, 0)
        .map(|p| clean_plan(&raw[p + PLAN_MARKER.len()..steps_at]))
        .unwrap_or_default();

    let mut labels = Vec::new();
    for m in mention_regex().captures_iter(segment) {
        labels.extend(labels_in_bracket(&m[1]));
    }
    if labels.is_empty() {
        let stripped = enumerator_line_regex().replace_all(segment, "");
        for c in bare_number_regex().captures_iter(&stripped) {
            push_range(&mut labels, &c[1], c.get(2).map(|m| m.as_str()));
        }
    }

    let mut seen = HashSet::new();
    let mut listed = Vec::new();
    let mut dropped = Vec::new();
    for k in labels {
        if !(1..=num_steps).contains(&k) {
            if !dropped.contains(&k) {
                dropped.push(k);
            }
        } else if seen.insert(k - 1) {
            listed.push(k - 1);
        }
    }
    if listed.is_empty() {
        return Err(Error::UnparseableResponse("no valid step index after the critical-steps marker".into()));
    }
    if !dropped.is_empty() {
        log::warn!("selector named out-of-range steps {dropped:?} (trajectory has {num_steps})");
    }
    let mut indices = listed.clone();
    indices.sort_unstable();

    let mut categories =
        reason_at.map(|r| extract_categories(&raw[r + REASON_MARKER.len()..], num_steps)).unwrap_or_default();
    categories.retain(|k, _| indices.binary_search(k).is_ok());

    Ok(SelectorResponse { raw: raw.to_string(), plan_summary, indices, listed, categories, truncated: false, dropped })
}

/// Keep at most `cap` indices, preferring the ones the model listed first.
pub fn enforce_cap(mut resp: SelectorResponse, cap: usize) -> SelectorResponse {
    if resp.listed.len() <= cap {
        return resp;
    }
    resp.listed.truncate(cap);
    resp.indices = resp.listed.clone();
    resp.indices.sort_unstable();
    let kept = &resp.indices;
    resp.categories.retain(|k, _| kept.binary_search(k).is_ok());
    resp.truncated = true;
    resp
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env_var: String,
    pub max_retries: usize,
    #[serde(with = "duration_secs", rename = "timeout_secs")]
    pub timeout: Duration,
    pub temperature: f64,
    /// Delay before the first retry; doubles on each further retry.
    pub retry_backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4o".to_string(),
            api_key_env_var: DEFAULT_API_KEY_ENV.to_string(),
            max_retries: 3,
            timeout: Duration::from_secs(120),
            temperature: 0.0,
            retry_backoff_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::Configuration("endpoint timeout must be positive".into()));
        }
        Ok(())
    }

    /// `base_url` with `/chat/completions` appended unless already present.
    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

/// Sends one chat-completion request and returns the reply text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, endpoint: &EndpointConfig, request: &ChatRequest) -> Result<String>;
}

/// Blocking HTTP transport for chat-completions-style endpoints.
pub struct HttpTransport;

impl ChatTransport for HttpTransport {
    fn complete(&self, endpoint: &EndpointConfig, request: &ChatRequest) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(endpoint.completions_url()).header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&endpoint.api_key_env_var) {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(request).map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            let snippet: String = body.chars().take(200).collect();
            return Err(Error::Transport(format!("HTTP {}: {snippet}", status.as_u16())));
        }
        let parsed: ChatResponse =
            resp.body_mut().read_json().map_err(|e| Error::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport("response has no choices".into()))
    }
}

/// On-disk response cache: one JSON file per key, named by the hex key.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    raw: String,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// SHA-256 over the model name and prompt text.
    pub fn key(prompt: &str, model: &str) -> String {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0u8]);
        h.update(prompt.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str::<CacheEntry>(&text).ok().map(|e| e.raw)
    }

    pub fn put(&self, key: &str, model: &str, raw: &str) -> Result<()> {
        let entry = CacheEntry { model: model.to_string(), raw: raw.to_string() };
        jsonl::write_json(&self.path(key), &entry)
    }
}

fn to_selection(t: &Trajectory, cfg: &SelectorPromptConfig, cap: usize, resp: SelectorResponse) -> CriticalSelection {
    let mut s = CriticalSelection::new(t.id.clone(), Strategy::Llm, cfg.ratio, cap);
    s.indices = resp.indices;
    s.categories = resp.categories;
    s.plan_summary = Some(resp.plan_summary).filter(|p| !p.is_empty());
    if resp.truncated {
        s.note = Some("selector listed more steps than the cap; kept the first listed".into());
    }
    s
}

/// Select critical steps of `t` with the configured chat model.
///
/// Warm cache entries are re-parsed without any request. Transport failures
/// and unparseable answers are retried up to `max_retries` times.
pub fn select_with_llm(
    t: &Trajectory,
    prompt_cfg: &SelectorPromptConfig,
    endpoint: &EndpointConfig,
    transport: &dyn ChatTransport,
    cache: Option<&ResponseCache>,
) -> Result<CriticalSelection> {
    let prompt = build_prompt(t, prompt_cfg)?;
    let cap = selection_cap(prompt_cfg.ratio, t.len())?;
    let key = ResponseCache::key(&prompt, &endpoint.model_name);

    if let Some(raw) = cache.and_then(|c| c.get(&key)) {
        if let Ok(resp) = parse_response(&raw, t.len()) {
            return Ok(to_selection(t, prompt_cfg, cap, enforce_cap(resp, cap)));
        }
        log::warn!("ignoring unparseable cache entry {key}");
    }

    let request = ChatRequest {
        model: endpoint.model_name.clone(),
        messages: vec![ChatMessage { role: "user".into(), content: prompt }],
        temperature: endpoint.temperature,
    };
    let attempts = endpoint.max_retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 && endpoint.retry_backoff_ms > 0 {
            let delay = endpoint.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
            std::thread::sleep(Duration::from_millis(delay));
        }
        let outcome = transport
            .complete(endpoint, &request)
            .and_then(|raw| parse_response(&raw, t.len()).map(|resp| (raw, resp)));
        match outcome {
            Ok((raw, resp)) => {
                if let Some(c) = cache {
                    c.put(&key, &endpoint.model_name, &raw)?;
                }
                return Ok(to_selection(t, prompt_cfg, cap, enforce_cap(resp, cap)));
            }
            Err(e @ (Error::Transport(_) | Error::UnparseableResponse(_))) => {
                log::warn!("selector attempt {} for {} failed: {e}", attempt + 1, t.id);
                last = e.to_string();
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::SelectorUnavailable { attempts, last })
}
