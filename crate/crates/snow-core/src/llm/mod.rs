//! Chat-completion client with schema-validated structured output.
//!
//! Three interchangeable backends keep every pipeline stage testable
//! offline: a live HTTP backend (chat/completions wire schema), a replay
//! backend that answers from a recorded cassette, and a mock backend that
//! answers from synthetic ground truth. Responses are validated against a
//! registered JSON schema; on violation the client re-asks with the
//! validator message appended, up to a bounded number of repair retries.

mod cassette;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Verbatim-text markers. Prompt text between `<<<` and `>>>` (quoted note
/// text, machine-readable context) is preserved exactly when hashing;
/// whitespace outside is collapsed, so reformatting a prompt template does
/// not invalidate recorded cassettes.
pub const VERBATIM_OPEN: &str = "<<<";
pub const VERBATIM_CLOSE: &str = ">>>";

/// Schema-violation repair retries after the initial attempt.
pub const REPAIR_RETRIES: u32 = 3;
/// Transport-failure retries for the live backend (exponential backoff).
pub const TRANSPORT_TRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Discovery,
    Extraction,
    Validation,
    PostProcess,
    Aggregation,
}

impl std::fmt::Display for AgentRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AgentRole::Discovery => "discovery",
            AgentRole::Extraction => "extraction",
            AgentRole::Validation => "validation",
            AgentRole::PostProcess => "post_process",
            AgentRole::Aggregation => "aggregation",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role: AgentRole,
    pub system_text: String,
    pub user_text: String,
    pub response_schema_id: String,
    pub temperature: f64,
    pub seed: u64,
}

impl ChatRequest {
    pub fn new(role: AgentRole, system_text: &str, user_text: &str, schema_id: &str) -> Self {
        Self {
            role,
            system_text: system_text.to_string(),
            user_text: user_text.to_string(),
            response_schema_id: schema_id.to_string(),
            temperature: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub requests_per_minute: f64,
    /// When set, every live response is appended here for later replay.
    pub record_to: Option<PathBuf>,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".to_string(),
            model: "default".to_string(),
            api_key_env: "SNOW_API_KEY".to_string(),
            requests_per_minute: 60.0,
            record_to: None,
        }
    }
}

/// Deterministic stand-in for the live model; implemented by the synthetic
/// generator's ground-truth mock.
pub trait MockResponder: Send + Sync {
    fn respond(&self, req: &ChatRequest) -> Result<serde_json::Value, String>;
}

pub enum Backend {
    Live(LiveConfig),
    Replay { cassette: PathBuf },
    Mock(Arc<dyn MockResponder>),
}

impl Backend {
    pub fn kind(&self) -> &'static str {
        match self {
            Backend::Live(_) => "live_http",
            Backend::Replay { .. } => "replay",
            Backend::Mock(_) => "mock",
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("schema {0:?} is already registered")]
    DuplicateSchema(String),
    #[error("schema {0:?} is not registered")]
    UnknownSchema(String),
    #[error("schema {id:?} does not parse: {message}")]
    BadSchema { id: String, message: String },
    #[error("response failed schema validation after {attempts} attempts: {last_error}; last response: {last_raw}")]
    SchemaFailure {
        attempts: u32,
        last_error: String,
        last_raw: String,
    },
    #[error("replay cassette has no entry for request hash {0}")]
    ReplayMiss(String),
    #[error("cannot read cassette: {0}")]
    Cassette(#[from] std::io::Error),
    #[error("live backend disabled; enable it explicitly to allow network calls")]
    LiveDisabled,
    #[error("environment variable {0} with the API key is not set")]
    MissingApiKey(String),
    #[error("transport failure after {tries} tries: {message}")]
    Transport { tries: u32, message: String },
    #[error("live response is not valid JSON: {0}")]
    BadResponse(String),
    #[error("mock backend error: {0}")]
    Mock(String),
}

struct RateLimiter {
    per_minute: f64,
    last: Option<Instant>,
}

impl RateLimiter {
    fn acquire(&mut self) {
        let min_gap = Duration::from_secs_f64(60.0 / self.per_minute.max(1e-9));
        if let Some(last) = self.last {
            let elapsed = last.elapsed();
            if elapsed < min_gap {
                std::thread::sleep(min_gap - elapsed);
            }
        }
        self.last = Some(Instant::now());
    }
}

pub struct LlmClient {
    backend: Backend,
    schemas: BTreeMap<String, jsonschema::Validator>,
    replay_map: Option<BTreeMap<String, serde_json::Value>>,
    allow_live: bool,
    limiter: Mutex<RateLimiter>,
}

impl LlmClient {
    pub fn new(backend: Backend) -> Result<Self, LlmError> {
        let replay_map = match &backend {
            Backend::Replay { cassette } => Some(cassette::load(cassette)?),
            _ => None,
        };
        let per_minute = match &backend {
            Backend::Live(cfg) => cfg.requests_per_minute,
            _ => f64::INFINITY,
        };
        Ok(Self {
            backend,
            schemas: BTreeMap::new(),
            replay_map,
            allow_live: false,
            limiter: Mutex::new(RateLimiter { per_minute, last: None }),
        })
    }

    /// Live calls are refused unless this guard is set; test suites never
    /// set it, so no test can reach the network.
    pub fn allow_live(mut self, allow: bool) -> Self {
        self.allow_live = allow;
        self
    }

    pub fn backend_kind(&self) -> &'static str {
        self.backend.kind()
    }

    pub fn register_schema(
        &mut self,
        id: &str,
        schema: &serde_json::Value,
    ) -> Result<(), LlmError> {
        if self.schemas.contains_key(id) {
            return Err(LlmError::DuplicateSchema(id.to_string()));
        }
        let validator = jsonschema::validator_for(schema).map_err(|e| LlmError::BadSchema {
            id: id.to_string(),
            message: e.to_string(),
        })?;
        self.schemas.insert(id.to_string(), validator);
        Ok(())
    }

    pub fn has_schema(&self, id: &str) -> bool {
        self.schemas.contains_key(id)
    }

    /// Issue a request and return a payload that validates against the
    /// request's registered schema. Schema violations trigger bounded
    /// repair retries with the validator message appended to the prompt.
    pub fn complete_structured(
        &self,
        req: &ChatRequest,
    ) -> Result<serde_json::Value, LlmError> {
        let validator = self
            .schemas
            .get(&req.response_schema_id)
            .ok_or_else(|| LlmError::UnknownSchema(req.response_schema_id.clone()))?;

        let mut attempt_req = req.clone();
        let mut last: Option<(String, String)> = None;
        let attempts = 1 + REPAIR_RETRIES;
        for _ in 0..attempts {
            let payload = self.raw_complete(&attempt_req)?;
            match validator.validate(&payload) {
                Ok(()) => return Ok(payload),
                Err(e) => {
                    let message = e.to_string();
                    attempt_req.user_text = format!(
                        "{}\n\nThe previous response failed schema validation: {}\nReturn only corrected JSON.",
                        req.user_text, message
                    );
                    last = Some((payload.to_string(), message));
                }
            }
        }
        let (last_raw, last_error) = last.expect("at least one attempt ran");
        Err(LlmError::SchemaFailure { attempts, last_error, last_raw })
    }

    fn raw_complete(&self, req: &ChatRequest) -> Result<serde_json::Value, LlmError> {
        match &self.backend {
            Backend::Mock(responder) => responder.respond(req).map_err(LlmError::Mock),
            Backend::Replay { .. } => {
                let key = request_hash(req);
                self.replay_map
                    .as_ref()
                    .expect("replay map loaded at construction")
                    .get(&key)
                    .cloned()
                    .ok_or(LlmError::ReplayMiss(key))
            }
            Backend::Live(cfg) => {
                if !self.allow_live {
                    return Err(LlmError::LiveDisabled);
                }
                self.limiter.lock().expect("limiter lock").acquire();
                let payload = live_complete(cfg, req)?;
                if let Some(path) = &cfg.record_to {
                    cassette::append(path, &request_hash(req), &payload)?;
                }
                Ok(payload)
            }
        }
    }
}

fn live_complete(cfg: &LiveConfig, req: &ChatRequest) -> Result<serde_json::Value, LlmError> {
    let api_key = std::env::var(&cfg.api_key_env)
        .map_err(|_| LlmError::MissingApiKey(cfg.api_key_env.clone()))?;
    let body = serde_json::json!({
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": req.system_text},
            {"role": "user", "content": req.user_text},
        ],
        "temperature": req.temperature,
        "seed": req.seed,
        "response_format": {"type": "json_object"},
    });
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));

    let mut last_error = String::new();
    for attempt in 0..TRANSPORT_TRIES {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(500 * (1 << attempt)));
        }
        let result = ureq::post(&url)
            .header("Authorization", &format!("Bearer {api_key}"))
            .send_json(&body);
        match result {
            Ok(mut response) => {
                let parsed: serde_json::Value = response
                    .body_mut()
                    .read_json()
                    .map_err(|e| LlmError::BadResponse(e.to_string()))?;
                let content = parsed["choices"][0]["message"]["content"]
                    .as_str()
                    .ok_or_else(|| {
                        LlmError::BadResponse("no choices[0].message.content".to_string())
                    })?;
                return serde_json::from_str(content)
                    .map_err(|e| LlmError::BadResponse(format!("content is not JSON: {e}")));
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Err(LlmError::Transport { tries: TRANSPORT_TRIES, message: last_error })
}

/// Content hash identifying a request in a cassette. Whitespace outside
/// verbatim blocks is collapsed before hashing.
pub fn request_hash(req: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(req.role.to_string());
    hasher.update([0]);
    hasher.update(&req.response_schema_id);
    hasher.update([0]);
    hasher.update(format!("{:.6}", req.temperature));
    hasher.update([0]);
    hasher.update(req.seed.to_le_bytes());
    hasher.update([0]);
    hasher.update(normalize_prompt(&req.system_text));
    hasher.update([0]);
    hasher.update(normalize_prompt(&req.user_text));
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collapse whitespace runs outside `<<< ... >>>` blocks; verbatim block
/// contents pass through untouched.
pub fn normalize_prompt(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    loop {
        match rest.find(VERBATIM_OPEN) {
            None => {
                collapse_into(rest, &mut out);
                return out;
            }
            Some(open) => {
                collapse_into(&rest[..open], &mut out);
                let after_open = &rest[open + VERBATIM_OPEN.len()..];
                match after_open.find(VERBATIM_CLOSE) {
                    None => {
                        // unterminated block: keep verbatim to the end
                        out.push_str(VERBATIM_OPEN);
                        out.push_str(after_open);
                        return out;
                    }
                    Some(close) => {
                        out.push_str(VERBATIM_OPEN);
                        out.push_str(&after_open[..close]);
                        out.push_str(VERBATIM_CLOSE);
                        rest = &after_open[close + VERBATIM_CLOSE.len()..];
                    }
                }
            }
        }
    }
}

fn collapse_into(text: &str, out: &mut String) {
    let mut in_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if !in_space {
                out.push(' ');
                in_space = true;
            }
        } else {
            out.push(c);
            in_space = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct FixedResponder {
        payloads: Mutex<Vec<serde_json::Value>>,
    }

    impl MockResponder for FixedResponder {
        fn respond(&self, _req: &ChatRequest) -> Result<serde_json::Value, String> {
            let mut queue = self.payloads.lock().unwrap();
            if queue.len() > 1 {
                Ok(queue.remove(0))
            } else {
                Ok(queue[0].clone())
            }
        }
    }

    fn client_with(payloads: Vec<serde_json::Value>) -> LlmClient {
        let responder = Arc::new(FixedResponder { payloads: Mutex::new(payloads) });
        let mut client = LlmClient::new(Backend::Mock(responder)).unwrap();
        client
            .register_schema(
                "thing",
                &json!({
                    "type": "object",
                    "required": ["name"],
                    "properties": {"name": {"type": "string"}}
                }),
            )
            .unwrap();
        client
    }

    fn request() -> ChatRequest {
        ChatRequest::new(AgentRole::Extraction, "sys", "user", "thing")
    }

    #[test]
    fn valid_payload_passes_through() {
        let client = client_with(vec![json!({"name": "x"})]);
        assert_eq!(client.complete_structured(&request()).unwrap(), json!({"name": "x"}));
    }

    #[test]
    fn schema_violation_triggers_repair_then_succeeds() {
        let client = client_with(vec![json!({"wrong": 1}), json!({"name": "fixed"})]);
        assert_eq!(
            client.complete_structured(&request()).unwrap(),
            json!({"name": "fixed"})
        );
    }

    #[test]
    fn persistent_schema_violation_errors_with_last_raw() {
        let client = client_with(vec![json!({"wrong": 1})]);
        match client.complete_structured(&request()) {
            Err(LlmError::SchemaFailure { attempts, last_raw, .. }) => {
                assert_eq!(attempts, 1 + REPAIR_RETRIES);
                assert!(last_raw.contains("wrong"));
            }
            other => panic!("expected schema failure, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_schema_registration_is_fatal() {
        let mut client = client_with(vec![json!({"name": "x"})]);
        let err = client.register_schema("thing", &json!({"type": "object"})).unwrap_err();
        assert!(matches!(err, LlmError::DuplicateSchema(_)));
    }

    #[test]
    fn unknown_schema_is_an_error() {
        let client = client_with(vec![json!({"name": "x"})]);
        let mut req = request();
        req.response_schema_id = "nope".into();
        assert!(matches!(
            client.complete_structured(&req),
            Err(LlmError::UnknownSchema(_))
        ));
    }

    #[test]
    fn live_backend_is_guarded_by_default() {
        let mut client = LlmClient::new(Backend::Live(LiveConfig::default())).unwrap();
        client
            .register_schema("thing", &json!({"type": "object"}))
            .unwrap();
        assert!(matches!(
            client.complete_structured(&request()),
            Err(LlmError::LiveDisabled)
        ));
    }

    #[test]
    fn replay_answers_from_cassette_and_misses_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let req = request();
        cassette::append(&path, &request_hash(&req), &json!({"name": "from-tape"})).unwrap();
        let mut client = LlmClient::new(Backend::Replay { cassette: path }).unwrap();
        client
            .register_schema(
                "thing",
                &json!({
                    "type": "object",
                    "required": ["name"],
                    "properties": {"name": {"type": "string"}}
                }),
            )
            .unwrap();
        assert_eq!(
            client.complete_structured(&req).unwrap(),
            json!({"name": "from-tape"})
        );
        let mut missing = req.clone();
        missing.user_text = "something else".into();
        let expected_hash = request_hash(&missing);
        match client.complete_structured(&missing) {
            Err(LlmError::ReplayMiss(h)) => assert_eq!(h, expected_hash),
            other => panic!("expected replay miss, got {other:?}"),
        }
    }

    #[test]
    fn hash_ignores_whitespace_outside_verbatim_blocks() {
        let a = ChatRequest::new(
            AgentRole::Extraction,
            "sys  text",
            "Extract from:\n<<<NOTE  TEXT\n  SPACED>>>\nplease",
            "thing",
        );
        let b = ChatRequest::new(
            AgentRole::Extraction,
            "sys text",
            "Extract   from: <<<NOTE  TEXT\n  SPACED>>> please",
            "thing",
        );
        assert_eq!(request_hash(&a), request_hash(&b));

        let c = ChatRequest::new(
            AgentRole::Extraction,
            "sys text",
            "Extract from: <<<NOTE TEXT SPACED>>> please",
            "thing",
        );
        assert_ne!(request_hash(&a), request_hash(&c), "note text changes must change the key");
    }
}
