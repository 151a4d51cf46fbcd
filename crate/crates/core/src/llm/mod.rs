//! Chat-completion clients: live HTTP, cassette replay, recording, and a
//! scripted in-process client.

mod cassette;
mod http;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{Cassette, CassetteEntry, RecordingClient, ReplayClient};
pub use http::{HttpChatClient, HttpChatConfig, LLM_API_KEY_ENV, LLM_BASE_URL_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, temperature: f64, messages: Vec<Message>) -> Self {
        Self {
            model: model.into(),
            temperature,
            messages,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        match self.messages.iter().find(|m| m.role != Role::System) {
            Some(m) if m.role == Role::User => Ok(()),
            Some(_) => Err(LlmError::InvalidRequest("first non-system message must be from the user".into())),
            None => Err(LlmError::InvalidRequest("no user message".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub model: String,
    pub usage: Usage,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32, retry_after_secs: Option<u64> },
    #[error("request timed out")]
    Timeout,
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider returned HTTP {status} after {attempts} attempts")]
    Http { status: u16, attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded response for request {key}")]
    MissingFixture { key: String },
    #[error("cassette already holds request {key}")]
    FixtureExists { key: String },
    #[error("cassette i/o: {0}")]
    Io(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::RateLimited { .. } | LlmError::Timeout | LlmError::Http { .. } | LlmError::Transport(_))
    }
}

pub trait LlmClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

/// Content hash over model, temperature and messages. Keys are hashed from a
/// canonical compact JSON rendering with sorted object keys, so field order
/// and formatting of the original request do not matter.
pub fn record_replay_key(request: &ChatRequest) -> String {
    let canonical = serde_json::json!({
        "model": request.model,
        "temperature": request.temperature,
        "messages": request.messages.iter().map(|m| serde_json::json!({"role": m.role, "content": m.content})).collect::<Vec<_>>(),
    });
    let bytes = serde_json::to_vec(&canonical).unwrap_or_default();
    hex::encode(Sha256::digest(&bytes))
}

type Script = dyn Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync;

/// In-process client answering from a closure; used for fixture authoring
/// and tests.
pub struct ScriptedClient {
    model: String,
    script: Box<Script>,
}

impl ScriptedClient {
    pub fn new(model: impl Into<String>, script: impl Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        Self {
            model: model.into(),
            script: Box::new(script),
        }
    }
}

impl LlmClient for ScriptedClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let content = (self.script)(request)?;
        Ok(ChatResponse {
            content,
            model: self.model.clone(),
            usage: Usage::default(),
            latency_ms: 0,
        })
    }
}

impl<T: LlmClient + ?Sized> LlmClient for std::sync::Arc<T> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).chat(request)
    }
}
