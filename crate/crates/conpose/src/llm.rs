//! LLM initializer over an OpenAI-compatible chat-completions endpoint.
//!
//! The model receives a zero-shot prompt listing the world-frame candidates
//! and returns a structured JSON payload with its reasoning and the chosen
//! indices.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use conpose_core::geometry::WorldContact;
use conpose_core::math::Vec2;
use conpose_core::selection::{Initializer, InitializerKind, Proposal, SelectionRequest};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const PROMPT_TEMPLATE: &str = include_str!("../assets/prompt_v1.txt");
pub const PROMPT_VERSION: &str = "prompt_v1";
const SYSTEM_MESSAGE: &str = "You plan cooperative pushing for mobile robots. Reply only with the requested JSON.";

pub const ENV_URL: &str = "CONPOSE_LLM_URL";
pub const ENV_API_KEY: &str = "CONPOSE_LLM_API_KEY";
pub const ENV_MODEL: &str = "CONPOSE_LLM_MODEL";
pub const ENV_AUDIT: &str = "CONPOSE_LLM_AUDIT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub index: usize,
    pub position: Vec2,
    pub direction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPrompt {
    pub task_description: String,
    pub target_phi: f64,
    pub candidates: Vec<PromptCandidate>,
    pub n: usize,
}

impl SelectionPrompt {
    pub fn candidate_lines(&self) -> String {
        let mut out = String::new();
        for c in &self.candidates {
            let _ = writeln!(out, "{}: {:.2} {:.2} {:.4}", c.index, c.position.x, c.position.y, c.direction);
        }
        out.pop();
        out
    }

    pub fn render(&self) -> String {
        self.task_description
            .replace("{n}", &self.n.to_string())
            .replace("{target_phi}", &format!("{:.4}", self.target_phi))
            .replace("{candidates}", &self.candidate_lines())
    }
}

pub fn build_prompt(world_candidates: &[WorldContact], target_phi: f64, n: usize) -> SelectionPrompt {
    SelectionPrompt {
        task_description: PROMPT_TEMPLATE.to_string(),
        target_phi,
        candidates: world_candidates
            .iter()
            .enumerate()
            .map(|(index, c)| PromptCandidate { index, position: c.position, direction: c.direction })
            .collect(),
        n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmProposal {
    pub reasoning: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("LLM endpoint not configured: set {0}")]
    NotConfigured(&'static str),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("response does not match the schema: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    /// Full chat-completions URL, or a base URL that gets `/chat/completions` appended.
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
    pub temperature: f64,
    pub audit_log: Option<PathBuf>,
}

impl LlmConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            retries: 2,
            temperature: 0.0,
            audit_log: None,
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        let url = std::env::var(ENV_URL).map_err(|_| LlmError::NotConfigured(ENV_URL))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| LlmError::NotConfigured(ENV_MODEL))?;
        let mut cfg = Self::new(url, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        cfg.audit_log = std::env::var(ENV_AUDIT).ok().map(PathBuf::from);
        Ok(cfg)
    }

    pub fn endpoint(&self) -> String {
        let trimmed = self.url.trim_end_matches('/');
        if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        }
    }
}

pub fn response_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "reasoning": { "type": "string" },
            "contact_points": { "type": "array", "items": { "type": "integer" } }
        },
        "required": ["reasoning", "contact_points"],
        "additionalProperties": false
    })
}

pub fn request_body(cfg: &LlmConfig, prompt: &SelectionPrompt) -> Value {
    json!({
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [
            { "role": "system", "content": SYSTEM_MESSAGE },
            { "role": "user", "content": prompt.render() }
        ],
        "response_format": {
            "type": "json_schema",
            "json_schema": { "name": "pushing_configuration", "strict": true, "schema": response_schema() }
        }
    })
}

#[derive(Deserialize)]
struct Payload {
    reasoning: String,
    contact_points: Vec<i64>,
}

/// Extracts the proposal from a chat-completions response body.
pub fn parse_completion(body: &[u8]) -> Result<LlmProposal, LlmError> {
    let bad = |m: String| LlmError::SchemaViolation(m);
    let value: Value = serde_json::from_slice(body).map_err(|e| bad(format!("body is not JSON: {e}")))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing choices[0].message.content".into()))?;
    parse_payload(content)
}

/// Parses the structured-output content string.
pub fn parse_payload(content: &str) -> Result<LlmProposal, LlmError> {
    let payload: Payload = serde_json::from_str(content.trim())
        .map_err(|e| LlmError::SchemaViolation(format!("content does not match schema: {e}")))?;
    let indices = payload
        .contact_points
        .iter()
        .map(|&i| usize::try_from(i).map_err(|_| LlmError::SchemaViolation(format!("negative index {i}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LlmProposal { reasoning: payload.reasoning, indices })
}

fn token_counts(body: &str) -> (Option<u64>, Option<u64>) {
    let v: Option<Value> = serde_json::from_str(body).ok();
    let get = |k: &str| v.as_ref().and_then(|v| v.pointer(&format!("/usage/{k}"))).and_then(Value::as_u64);
    (get("prompt_tokens"), get("completion_tokens"))
}

/// Blocking chat-completions client; shareable across threads.
pub struct LlmClient {
    cfg: LlmConfig,
    agent: ureq::Agent,
    audit: Mutex<Option<File>>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("endpoint", &self.cfg.endpoint()).field("model", &self.cfg.model).finish()
    }
}

impl LlmClient {
    pub fn new(cfg: LlmConfig) -> std::io::Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let audit = match &cfg.audit_log {
            Some(path) => Some(OpenOptions::new().create(true).append(true).open(path)?),
            None => None,
        };
        Ok(Self { cfg, agent, audit: Mutex::new(audit) })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    fn send_once(&self, body: &str) -> Result<(u16, String), LlmError> {
        let mut req = self.agent.post(&self.cfg.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_transport)?;
        Ok((status, text))
    }

    /// Sends one request, retrying transport failures and server errors.
    pub fn propose(&self, prompt: &SelectionPrompt) -> Result<LlmProposal, LlmError> {
        let request = request_body(&self.cfg, prompt);
        let body = request.to_string();
        let mut last = LlmError::Transport("no attempt made".into());
        for attempt in 0..=self.cfg.retries {
            let started = Instant::now();
            let outcome = self.send_once(&body);
            let latency = started.elapsed().as_secs_f64();
            let result = match &outcome {
                Ok((200..=299, text)) => parse_completion(text.as_bytes()),
                Ok((status, text)) => Err(LlmError::Http { status: *status, body: text.chars().take(500).collect() }),
                Err(e) => Err(e.clone()),
            };
            self.audit(&request, &outcome, &result, latency, attempt);
            match result {
                Ok(p) => return Ok(p),
                Err(e @ (LlmError::Timeout | LlmError::Transport(_))) => last = e,
                Err(e @ LlmError::Http { status: 500.., .. }) => last = e,
                Err(e) => return Err(e),
            }
            log::warn!("LLM request attempt {} failed: {last}", attempt + 1);
        }
        Err(last)
    }

    fn audit(
        &self,
        request: &Value,
        outcome: &Result<(u16, String), LlmError>,
        result: &Result<LlmProposal, LlmError>,
        latency: f64,
        attempt: u32,
    ) {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let (status, response) = match outcome {
            Ok((s, t)) => (Some(*s), Some(t.as_str())),
            Err(_) => (None, None),
        };
        let (prompt_tokens, completion_tokens) = response.map(token_counts).unwrap_or((None, None));
        let line = json!({
            "timestamp": timestamp,
            "endpoint": self.cfg.endpoint(),
            "model": self.cfg.model,
            "prompt_version": PROMPT_VERSION,
            "attempt": attempt,
            "latency_s": latency,
            "status": status,
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "request": request,
            "response": response,
            "error": result.as_ref().err().map(|e| e.to_string()),
        });
        log::debug!("llm audit {line}");
        if let Ok(mut guard) = self.audit.lock() {
            if let Some(file) = guard.as_mut() {
                let _ = writeln!(file, "{line}");
            }
        }
    }
}

fn map_transport(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        other => LlmError::Transport(other.to_string()),
    }
}

/// [`Initializer`] backed by an [`LlmClient`].
#[derive(Debug, Clone)]
pub struct LlmInitializer {
    client: Arc<LlmClient>,
}

impl LlmInitializer {
    pub fn new(client: Arc<LlmClient>) -> Self {
        Self { client }
    }
}

impl Initializer for LlmInitializer {
    fn kind(&self) -> InitializerKind {
        InitializerKind::Llm
    }

    fn propose(&mut self, request: &SelectionRequest<'_>) -> Result<Proposal, String> {
        let prompt = build_prompt(request.candidates, request.target_phi, request.n);
        self.client
            .propose(&prompt)
            .map(|p| Proposal { indices: p.indices, reasoning: Some(p.reasoning) })
            .map_err(|e| e.to_string())
    }
}
