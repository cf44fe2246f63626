//! Chat-completion clients shared by the translator and generator roles.

mod http;
mod mock;

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpChatClient, RequestLogEntry};
pub use mock::{MockScript, ScriptEntry, ScriptedFailure, ScriptedModel};

pub const DEFAULT_MAX_TOKENS: u32 = 768;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl SamplingParams {
    pub fn new(temperature: f64, max_tokens: u32) -> Result<Self, LlmError> {
        if !(0.0..=2.0).contains(&temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {temperature} outside [0, 2]"
            )));
        }
        if max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        Ok(Self {
            temperature,
            max_tokens,
        })
    }
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// Connection settings for an OpenAI-style `/chat/completions` endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_secs: 120,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 8_000,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Translate,
    Generate,
}

/// Identifies which task and attempt a request belongs to. Endpoints ignore
/// it; scripted models key their replies on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestTag {
    pub task_id: String,
    pub attempt: u32,
    pub purpose: Purpose,
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub params: SamplingParams,
    pub tag: RequestTag,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        let Some(first) = self.messages.first() else {
            return Err(LlmError::InvalidRequest("no messages".into()));
        };
        if first.role == Role::Assistant {
            return Err(LlmError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.is_empty()) {
            return Err(LlmError::InvalidRequest(format!("message {i} is empty")));
        }
        SamplingParams::new(self.params.temperature, self.params.max_tokens)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("endpoint rejected request with status {status}: {body}")]
    EndpointRejected { status: u16, body: String },
    #[error("endpoint returned an empty completion")]
    EmptyCompletion,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

/// A chat model that maps a message list to assistant text.
pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;

    /// Human-readable model label recorded alongside outputs.
    fn label(&self) -> String;
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *permits == 0 {
            permits = self
                .available
                .wait(permits)
                .unwrap_or_else(|e| e.into_inner());
        }
        *permits -= 1;
        Permit { sem: self }
    }
}

pub(crate) struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut permits = self.sem.permits.lock().unwrap_or_else(|e| e.into_inner());
        *permits += 1;
        self.sem.available.notify_one();
    }
}
