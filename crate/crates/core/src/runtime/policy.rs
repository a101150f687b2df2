//! Policy backends: how the next (thought, action) is produced.
//!
//! Scripted backends replay fixed decision lists for tests and fixtures; the
//! stochastic variant flips a seeded coin per attempt; [`SimSolverPolicy`]
//! actually solves constraint questions from observations alone; and
//! [`RemotePolicy`] speaks the chat-completions HTTP contract to any
//! OpenAI-compatible endpoint.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, VisibleContext};
use crate::error::{Error, Result};
use crate::text::normalize_answer;
use crate::world::generate::{parse_clause, subjects_in_body, INTRO_VARIANTS};

/// One policy emission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDecision {
    pub thought: String,
    pub action: Action,
}

impl PolicyDecision {
    pub fn new(thought: impl Into<String>, action: Action) -> Self {
        Self {
            thought: thought.into(),
            action,
        }
    }
}

/// A policy: maps the visible context to the next decision. An `Err` means
/// the emission was malformed (the runtime records it and moves on).
pub trait PolicyBackend: Send + Sync {
    fn next(&self, ctx: &VisibleContext<'_>) -> Result<PolicyDecision>;
}

/// Deterministic replay of a fixed decision list. `cycling` repeats the
/// script forever; otherwise exhaustion is a malformed emission.
pub struct ScriptedPolicy {
    script: Vec<PolicyDecision>,
    cursor: Mutex<usize>,
    cycle: bool,
}

impl ScriptedPolicy {
    pub fn new(script: Vec<PolicyDecision>) -> Self {
        Self {
            script,
            cursor: Mutex::new(0),
            cycle: false,
        }
    }

    pub fn cycling(script: Vec<PolicyDecision>) -> Self {
        Self {
            script,
            cursor: Mutex::new(0),
            cycle: true,
        }
    }
}

impl PolicyBackend for ScriptedPolicy {
    fn next(&self, _ctx: &VisibleContext<'_>) -> Result<PolicyDecision> {
        let mut cursor = self.cursor.lock().expect("script cursor");
        if self.script.is_empty() {
            return Err(Error::invalid("empty script"));
        }
        if *cursor >= self.script.len() {
            if self.cycle {
                *cursor = 0;
            } else {
                return Err(Error::invalid("script exhausted"));
            }
        }
        let decision = self.script[*cursor].clone();
        *cursor += 1;
        Ok(decision)
    }
}

/// Closure-backed policy for one-off behaviors in tests.
pub struct FnPolicy<F>(pub F);

impl<F> PolicyBackend for FnPolicy<F>
where
    F: Fn(&VisibleContext<'_>) -> Result<PolicyDecision> + Send + Sync,
{
    fn next(&self, ctx: &VisibleContext<'_>) -> Result<PolicyDecision> {
        (self.0)(ctx)
    }
}

/// Seeded attempt policy: each segment issues one search, then answers — the
/// reference with probability `success_p`, a distinct wrong answer otherwise.
/// Used for solve-rate experiments where attempts must be independent.
pub struct StochasticScriptedPolicy {
    reference: String,
    success_p: f64,
    rng: Mutex<ChaCha8Rng>,
    wrong_counter: AtomicUsize,
}

impl StochasticScriptedPolicy {
    pub fn new(reference: impl Into<String>, success_p: f64, seed: u64) -> Self {
        Self {
            reference: reference.into(),
            success_p,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            wrong_counter: AtomicUsize::new(0),
        }
    }
}

impl PolicyBackend for StochasticScriptedPolicy {
    fn next(&self, ctx: &VisibleContext<'_>) -> Result<PolicyDecision> {
        if ctx.steps.is_empty() {
            let mut args = BTreeMap::new();
            args.insert("query".to_string(), ctx.query.to_string());
            return Ok(PolicyDecision::new(
                "gather evidence",
                Action::ToolCall {
                    tool: "search".to_string(),
                    args,
                },
            ));
        }
        let success = self.rng.lock().expect("rng lock").gen_bool(self.success_p);
        let text = if success {
            self.reference.clone()
        } else {
            let n = self.wrong_counter.fetch_add(1, Ordering::SeqCst);
            format!("wrong-{n}")
        };
        Ok(PolicyDecision::new("commit to an answer", Action::FinalAnswer { text }))
    }
}

/// Marker lines used in verification queries, shared by builders and the
/// oracle verifier.
pub const VERIFY_QUESTION_PREFIX: &str = "question: ";
pub const VERIFY_CANDIDATE_PREFIX: &str = "candidate: ";

/// Compose the query handed to a verifier policy: the original question and
/// the candidate answer on marked lines. [`OraclePolicy`] and any scripted or
/// remote verifier read the candidate back out via the shared prefixes.
pub fn build_verification_query(question: &str, candidate: &str) -> String {
    format!(
        "{VERIFY_QUESTION_PREFIX}{question}\n{VERIFY_CANDIDATE_PREFIX}{candidate}"
    )
}

/// Perfect verifier for experiments: reads the candidate out of the
/// verification query and compares it to the known reference without any
/// tool use. Answers `pass — ...` or `fail factual_error: ...`.
pub struct OraclePolicy {
    reference: String,
}

impl OraclePolicy {
    pub fn new(reference: impl Into<String>) -> Self {
        Self {
            reference: reference.into(),
        }
    }
}

impl PolicyBackend for OraclePolicy {
    fn next(&self, ctx: &VisibleContext<'_>) -> Result<PolicyDecision> {
        let candidate = ctx
            .query
            .lines()
            .find_map(|l| l.strip_prefix(VERIFY_CANDIDATE_PREFIX))
            .ok_or_else(|| Error::invalid("no candidate line in verification query"))?;
        let text = if normalize_answer(candidate) == normalize_answer(&self.reference) {
            "pass — candidate matches the reference".to_string()
        } else {
            format!("fail factual_error: expected {:?}", self.reference)
        };
        Ok(PolicyDecision::new("compare with reference", Action::FinalAnswer { text }))
    }
}

/// Tool-using verifier built from any solver policy: it re-solves the
/// question embedded in a verification query (delegating every decision to
/// the inner policy) and, when the inner policy commits to an answer,
/// replies `pass`/`fail` by comparing that answer with the candidate line.
pub struct ResolvingVerifier<P> {
    inner: P,
}

impl<P: PolicyBackend> ResolvingVerifier<P> {
    pub fn new(inner: P) -> Self {
        Self { inner }
    }
}

impl<P: PolicyBackend> PolicyBackend for ResolvingVerifier<P> {
    fn next(&self, ctx: &VisibleContext<'_>) -> Result<PolicyDecision> {
        let question = ctx
            .query
            .lines()
            .find_map(|l| l.strip_prefix(VERIFY_QUESTION_PREFIX))
            .ok_or_else(|| Error::invalid("no question line in verification query"))?;
        let candidate = ctx
            .query
            .lines()
            .find_map(|l| l.strip_prefix(VERIFY_CANDIDATE_PREFIX))
            .ok_or_else(|| Error::invalid("no candidate line in verification query"))?;
        let rewritten = VisibleContext {
            system_prompt: ctx.system_prompt,
            query: question,
            preamble: ctx.preamble,
            steps: ctx.steps,
        };
        let decision = self.inner.next(&rewritten)?;
        match decision.action {
            Action::FinalAnswer { text } => {
                let verdict = if normalize_answer(&text) == normalize_answer(candidate) {
                    "pass — independent solve agrees with the candidate".to_string()
                } else {
                    format!("fail factual_error: independent solve found {text:?}")
                };
                Ok(PolicyDecision::new(decision.thought, Action::FinalAnswer { text: verdict }))
            }
            action => Ok(PolicyDecision {
                thought: decision.thought,
                action,
            }),
        }
    }
}

/// Heuristic constraint-question solver driven entirely by the visible
/// context (a pure function of it): parse the question's clauses, search
/// each clause's value, visit the top hits, then intersect the entity names
/// whose fact sentences appear in the visited pages.
pub struct SimSolverPolicy {
    /// Solve using only the first N clauses (a deliberately hasty solver);
    /// `None` uses all of them.
    pub max_clauses: Option<usize>,
    /// How many top search hits to visit per clause.
    pub visits_per_clause: usize,
}

impl Default for SimSolverPolicy {
    fn default() -> Self {
        Self {
            max_clauses: None,
            visits_per_clause: 2,
        }
    }
}

impl SimSolverPolicy {
    /// Solver that only chases the first clause with a single page visit —
    /// fast, shallow, and frequently wrong on multi-constraint questions.
    pub fn hasty() -> Self {
        Self {
            max_clauses: Some(1),
            visits_per_clause: 1,
        }
    }

    /// Split a rendered question into clause strings.
    pub fn question_clauses(query: &str) -> Vec<(String, String)> {
        let trimmed = query.trim().trim_end_matches('?');
        let body = INTRO_VARIANTS
            .iter()
            .find_map(|intro| trimmed.strip_prefix(intro))
            .unwrap_or(trimmed)
            .trim();
        body.split("; ")
            .filter_map(parse_clause)
            .collect()
    }
}

impl PolicyBackend for SimSolverPolicy {
    fn next(&self, ctx: &VisibleContext<'_>) -> Result<PolicyDecision> {
        let mut clauses = Self::question_clauses(ctx.query);
        if let Some(cap) = self.max_clauses {
            clauses.truncate(cap);
        }
        if clauses.is_empty() {
            return Ok(PolicyDecision::new(
                "the question has no recognizable constraints",
                Action::FinalAnswer {
                    text: "unknown".to_string(),
                },
            ));
        }

        let searches_done = ctx
            .steps
            .iter()
            .filter(|s| matches!(&s.action, Action::ToolCall { tool, .. } if tool == "search"))
            .count();
        if searches_done < clauses.len() {
            let (_, value) = &clauses[searches_done];
            let mut args = BTreeMap::new();
            args.insert("query".to_string(), value.clone());
            return Ok(PolicyDecision::new(
                format!("look up constraint {} of {}", searches_done + 1, clauses.len()),
                Action::ToolCall {
                    tool: "search".to_string(),
                    args,
                },
            ));
        }

        // Visit queue: top hits per search observation, deduped in order.
        let mut queue: Vec<String> = Vec::new();
        for step in ctx.steps {
            if let Action::ToolCall { tool, .. } = &step.action {
                if tool == "search" {
                    for line in step.observation.lines().take(self.visits_per_clause) {
                        if let Some(doc_id) = line.split('\t').next() {
                            if !doc_id.is_empty()
                                && doc_id != "no results"
                                && !queue.iter().any(|d| d == doc_id)
                            {
                                queue.push(doc_id.to_string());
                            }
                        }
                    }
                }
            }
        }
        let visited: Vec<&str> = ctx
            .steps
            .iter()
            .filter_map(|s| match &s.action {
                Action::ToolCall { tool, args } if tool == "visit" => {
                    args.get("doc_id").map(String::as_str)
                }
                _ => None,
            })
            .collect();
        if let Some(next_doc) = queue.iter().find(|d| !visited.contains(&d.as_str())) {
            let mut args = BTreeMap::new();
            args.insert("doc_id".to_string(), next_doc.clone());
            return Ok(PolicyDecision::new(
                format!("read {next_doc}"),
                Action::ToolCall {
                    tool: "visit".to_string(),
                    args,
                },
            ));
        }

        // All evidence gathered: intersect subjects across clauses.
        let pages: Vec<&str> = ctx
            .steps
            .iter()
            .filter(|s| matches!(&s.action, Action::ToolCall { tool, .. } if tool == "visit"))
            .map(|s| s.observation.as_str())
            .collect();
        let mut candidates: Option<Vec<String>> = None;
        for (pred, value) in &clauses {
            let mut subjects: Vec<String> = Vec::new();
            for page in &pages {
                for name in subjects_in_body(page, pred, value) {
                    if !subjects.contains(&name) {
                        subjects.push(name);
                    }
                }
            }
            candidates = Some(match candidates {
                None => subjects,
                Some(prev) => prev.into_iter().filter(|n| subjects.contains(n)).collect(),
            });
        }
        let mut survivors = candidates.unwrap_or_default();
        survivors.sort();
        let text = survivors.first().cloned().unwrap_or_else(|| "unknown".to_string());
        Ok(PolicyDecision::new(
            format!("{} candidate(s) satisfy every constraint", survivors.len()),
            Action::FinalAnswer { text },
        ))
    }
}

/// Connection settings for a chat-completions endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: u64,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout_secs: 60,
        }
    }
}

/// Chat-completions wire format (the subset used here).
#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    tools: serde_json::Value,
}

#[derive(Serialize, Deserialize, Clone)]
struct ChatMessage {
    role: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    content: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tool_calls: Option<Vec<WireToolCall>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tool_call_id: Option<String>,
}

#[derive(Serialize, Deserialize, Clone)]
struct WireToolCall {
    id: String,
    #[serde(rename = "type")]
    kind: String,
    function: WireFunction,
}

#[derive(Serialize, Deserialize, Clone)]
struct WireFunction {
    name: String,
    arguments: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

fn default_tool_specs() -> serde_json::Value {
    serde_json::json!([
        {
            "type": "function",
            "function": {
                "name": "search",
                "description": "Search documents by keyword overlap.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "query": {"type": "string"},
                        "limit": {"type": "string"}
                    },
                    "required": ["query"]
                }
            }
        },
        {
            "type": "function",
            "function": {
                "name": "visit",
                "description": "Fetch a document by id.",
                "parameters": {
                    "type": "object",
                    "properties": {"doc_id": {"type": "string"}},
                    "required": ["doc_id"]
                }
            }
        }
    ])
}

/// Policy backed by an OpenAI-compatible chat-completions endpoint. The
/// visible context maps onto the message list: system prompt (+preamble) as
/// the system message, query as the first user message, then alternating
/// assistant/tool messages per recorded step.
pub struct RemotePolicy {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn context_messages(ctx: &VisibleContext<'_>) -> Vec<ChatMessage> {
        let system = match ctx.preamble {
            Some(pre) => format!("{}\n\n{}", ctx.system_prompt, pre),
            None => ctx.system_prompt.to_string(),
        };
        let mut messages = vec![
            ChatMessage {
                role: "system".to_string(),
                content: Some(system),
                tool_calls: None,
                tool_call_id: None,
            },
            ChatMessage {
                role: "user".to_string(),
                content: Some(ctx.query.to_string()),
                tool_calls: None,
                tool_call_id: None,
            },
        ];
        for step in ctx.steps {
            match &step.action {
                Action::ToolCall { tool, args } => {
                    let call_id = format!("call_{}", step.index);
                    messages.push(ChatMessage {
                        role: "assistant".to_string(),
                        content: Some(step.thought.clone()),
                        tool_calls: Some(vec![WireToolCall {
                            id: call_id.clone(),
                            kind: "function".to_string(),
                            function: WireFunction {
                                name: tool.clone(),
                                arguments: serde_json::to_string(args).expect("args serialize"),
                            },
                        }]),
                        tool_call_id: None,
                    });
                    messages.push(ChatMessage {
                        role: "tool".to_string(),
                        content: Some(step.observation.clone()),
                        tool_calls: None,
                        tool_call_id: Some(call_id),
                    });
                }
                Action::FinalAnswer { text } => {
                    messages.push(ChatMessage {
                        role: "assistant".to_string(),
                        content: Some(text.clone()),
                        tool_calls: None,
                        tool_call_id: None,
                    });
                }
            }
        }
        messages
    }
}

impl PolicyBackend for RemotePolicy {
    fn next(&self, ctx: &VisibleContext<'_>) -> Result<PolicyDecision> {
        let request = ChatRequest {
            model: &self.config.model,
            messages: Self::context_messages(ctx),
            tools: default_tool_specs(),
        };
        let mut builder = self.client.post(&self.config.endpoint).json(&request);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| Error::Backend(format!("request failed: {e}")))?;
        if !response.status().is_success() {
            return Err(Error::Backend(format!("http {}", response.status())));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| Error::Backend(format!("bad response body: {e}")))?;
        let message = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::Backend("no choices in response".into()))?
            .message;
        if let Some(calls) = message.tool_calls.filter(|c| !c.is_empty()) {
            let call = &calls[0];
            let raw: serde_json::Value = serde_json::from_str(&call.function.arguments)
                .map_err(|e| Error::Backend(format!("bad tool arguments: {e}")))?;
            let obj = raw
                .as_object()
                .ok_or_else(|| Error::Backend("tool arguments not an object".into()))?;
            let mut args = BTreeMap::new();
            for (k, v) in obj {
                let value = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                args.insert(k.clone(), value);
            }
            return Ok(PolicyDecision::new(
                message.content.unwrap_or_default(),
                Action::ToolCall {
                    tool: call.function.name.clone(),
                    args,
                },
            ));
        }
        let content = message
            .content
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| Error::Backend("assistant message had no content".into()))?;
        Ok(PolicyDecision::new("", Action::FinalAnswer { text: content }))
    }
}
