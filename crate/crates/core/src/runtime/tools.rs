//! Tool registry, observation cache, and retry handling for agent rollouts.
//!
//! The layer sits between the policy and the world: calls are dispatched by
//! name, canonicalized arguments key a cache of observations, and transient
//! failures are retried with exponential backoff. Budget accounting happens
//! in the rollout loop — the layer only reports whether a call counts as an
//! agent action (`charged`).

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use crate::retry::{RetryPolicy, Sleeper, NO_SLEEP};
use crate::world::World;

/// Tool failure modes: transient errors are retried, permanent ones are not.
#[derive(Debug, Clone)]
pub enum ToolError {
    Transient(String),
    Permanent(String),
}

impl std::fmt::Display for ToolError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ToolError::Transient(msg) => write!(f, "transient: {msg}"),
            ToolError::Permanent(msg) => write!(f, "permanent: {msg}"),
        }
    }
}

/// A callable tool. Implementations must be safe to share across rollouts.
pub trait Tool: Send + Sync {
    fn name(&self) -> &'static str;
    fn invoke(&self, args: &BTreeMap<String, String>) -> Result<String, ToolError>;
}

/// What one dispatched call produced.
#[derive(Debug, Clone)]
pub struct ToolOutcome {
    pub observation: String,
    /// Whether this call counts against the rollout's tool budget. Executed
    /// calls and cache hits are charged; calls that never reached a tool
    /// (unknown name) are not.
    pub charged: bool,
    pub cache_hit: bool,
    pub attempts: u32,
}

/// Registry + cache + retry policy.
pub struct ToolLayer {
    tools: BTreeMap<&'static str, Arc<dyn Tool>>,
    cache: Mutex<HashMap<(String, String), String>>,
    pub retry: RetryPolicy,
    sleeper: Box<dyn Sleeper>,
}

impl ToolLayer {
    pub fn new() -> Self {
        Self {
            tools: BTreeMap::new(),
            cache: Mutex::new(HashMap::new()),
            retry: RetryPolicy::immediate(3),
            sleeper: Box::new(NoOpSleeper),
        }
    }

    /// Layer with `search` and `visit` tools over a shared world.
    pub fn for_world(world: Arc<World>) -> Self {
        let mut layer = Self::new();
        layer.register(Arc::new(SearchTool {
            world: world.clone(),
        }));
        layer.register(Arc::new(VisitTool { world }));
        layer
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) {
        self.tools.insert(tool.name(), tool);
    }

    pub fn with_retry(mut self, retry: RetryPolicy, sleeper: Box<dyn Sleeper>) -> Self {
        self.retry = retry;
        self.sleeper = sleeper;
        self
    }

    pub fn has_tool(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// Canonical cache key: the BTreeMap already fixes key order, so its
    /// JSON form is canonical.
    fn cache_key(tool: &str, args: &BTreeMap<String, String>) -> (String, String) {
        (
            tool.to_string(),
            serde_json::to_string(args).expect("string map serializes"),
        )
    }

    /// Dispatch one call: cache lookup, then invocation with retries.
    pub fn execute(&self, tool: &str, args: &BTreeMap<String, String>) -> ToolOutcome {
        let Some(tool_impl) = self.tools.get(tool) else {
            return ToolOutcome {
                observation: format!("error: unknown tool '{tool}'"),
                charged: false,
                cache_hit: false,
                attempts: 0,
            };
        };
        let key = Self::cache_key(tool, args);
        if let Some(cached) = self.cache.lock().expect("cache lock").get(&key) {
            return ToolOutcome {
                observation: cached.clone(),
                charged: true,
                cache_hit: true,
                attempts: 0,
            };
        }
        let outcome = self.retry.run(self.sleeper.as_ref(), |_| {
            match tool_impl.invoke(args) {
                Ok(obs) => Ok(obs),
                // permanent failures must not burn retry attempts
                Err(ToolError::Permanent(msg)) => Ok(format!("error: {msg}")),
                Err(ToolError::Transient(msg)) => Err(msg),
            }
        });
        match outcome.result {
            Ok(observation) => {
                self.cache
                    .lock()
                    .expect("cache lock")
                    .insert(key, observation.clone());
                ToolOutcome {
                    observation,
                    charged: true,
                    cache_hit: false,
                    attempts: outcome.attempts,
                }
            }
            Err(last) => ToolOutcome {
                observation: format!(
                    "error: tool '{tool}' failed after {} attempts: {last}",
                    outcome.attempts
                ),
                charged: true,
                cache_hit: false,
                attempts: outcome.attempts,
            },
        }
    }
}

impl Default for ToolLayer {
    fn default() -> Self {
        Self::new()
    }
}

struct NoOpSleeper;

impl Sleeper for NoOpSleeper {
    fn sleep_ms(&self, ms: u64) {
        NO_SLEEP.sleep_ms(ms);
    }
}

/// Lexical document search over the world. Args: `query` (required),
/// `limit` (optional, default 5). One hit per line: `doc_id\tscore\ttitle`.
pub struct SearchTool {
    world: Arc<World>,
}

impl Tool for SearchTool {
    fn name(&self) -> &'static str {
        "search"
    }

    fn invoke(&self, args: &BTreeMap<String, String>) -> Result<String, ToolError> {
        let query = args
            .get("query")
            .ok_or_else(|| ToolError::Permanent("search requires a 'query' argument".into()))?;
        let limit = match args.get("limit") {
            Some(raw) => raw
                .parse::<usize>()
                .map_err(|_| ToolError::Permanent(format!("bad limit {raw:?}")))?,
            None => 5,
        };
        let hits = self.world.search(query, limit);
        if hits.is_empty() {
            return Ok("no results".to_string());
        }
        Ok(hits
            .iter()
            .map(|h| format!("{}\t{}\t{}", h.doc_id, h.score, h.title))
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

/// Fetch a document body by id. Args: `doc_id`.
pub struct VisitTool {
    world: Arc<World>,
}

impl Tool for VisitTool {
    fn name(&self) -> &'static str {
        "visit"
    }

    fn invoke(&self, args: &BTreeMap<String, String>) -> Result<String, ToolError> {
        let doc_id = args
            .get("doc_id")
            .ok_or_else(|| ToolError::Permanent("visit requires a 'doc_id' argument".into()))?;
        match self.world.document(doc_id) {
            Ok(doc) => Ok(format!("# {}\n{}", doc.title, doc.body)),
            Err(_) => Err(ToolError::Permanent(format!("document '{doc_id}' not found"))),
        }
    }
}

/// Test tool that fails transiently a configured number of times before
/// succeeding, counting every invocation.
pub struct FlakyTool {
    fail_times: u32,
    invocations: AtomicU32,
}

impl FlakyTool {
    pub fn new(fail_times: u32) -> Self {
        Self {
            fail_times,
            invocations: AtomicU32::new(0),
        }
    }

    pub fn invocations(&self) -> u32 {
        self.invocations.load(Ordering::SeqCst)
    }
}

impl Tool for FlakyTool {
    fn name(&self) -> &'static str {
        "flaky"
    }

    fn invoke(&self, _args: &BTreeMap<String, String>) -> Result<String, ToolError> {
        let n = self.invocations.fetch_add(1, Ordering::SeqCst);
        if n < self.fail_times {
            Err(ToolError::Transient(format!("injected fault {}", n + 1)))
        } else {
            Ok("flaky ok".to_string())
        }
    }
}
