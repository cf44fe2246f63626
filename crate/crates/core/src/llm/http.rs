use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatModel, CompletionRequest, EndpointConfig, LlmError, Semaphore};

/// One line of the audit log: every HTTP attempt and the backoff that followed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestLogEntry {
    pub task_id: String,
    pub attempt: u32,
    pub outcome: String,
    /// Delay slept before the next attempt; `None` when no retry followed.
    pub backoff_ms: Option<u64>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: Option<WireMessage>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

enum AttemptError {
    Retryable(LlmError),
    Fatal(LlmError),
}

/// Blocking client for OpenAI-compatible chat-completion endpoints.
pub struct HttpChatClient {
    config: EndpointConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    in_flight: Semaphore,
    log: Mutex<Vec<RequestLogEntry>>,
}

impl HttpChatClient {
    /// Builds a client. The credential is read from the configured
    /// environment variable, never from files.
    pub fn new(config: EndpointConfig) -> Result<Self, LlmError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::InvalidRequest(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                detail: e.to_string(),
            })?;
        let in_flight = Semaphore::new(config.max_in_flight);
        Ok(Self {
            config,
            api_key,
            http,
            in_flight,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn endpoint_url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_log(&self) -> Vec<RequestLogEntry> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Exponential backoff for the given retry number (0-based), capped.
    pub fn backoff_for(&self, retry: u32) -> Duration {
        let ms = self
            .config
            .backoff_base_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(self.config.backoff_max_ms);
        Duration::from_millis(ms)
    }

    fn payload(&self, request: &CompletionRequest) -> Result<Vec<u8>, LlmError> {
        serde_json::to_vec(&WireRequest {
            model: &self.config.model,
            messages: &request.messages,
            temperature: request.params.temperature,
            max_tokens: request.params.max_tokens,
        })
        .map_err(|e| LlmError::InvalidRequest(e.to_string()))
    }

    fn attempt(&self, body: &[u8]) -> Result<String, AttemptError> {
        let mut builder = self
            .http
            .post(self.endpoint_url())
            .header("Content-Type", "application/json")
            .body(body.to_vec());
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            AttemptError::Retryable(LlmError::Transport {
                attempts: 1,
                detail: e.to_string(),
            })
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            AttemptError::Retryable(LlmError::Transport {
                attempts: 1,
                detail: e.to_string(),
            })
        })?;
        if !status.is_success() {
            let err = LlmError::EndpointRejected {
                status: status.as_u16(),
                body: excerpt(&text, 500),
            };
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                AttemptError::Retryable(err)
            } else {
                AttemptError::Fatal(err)
            });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Fatal(LlmError::MalformedResponse(e.to_string())))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message)
            .and_then(|m| m.content)
            .unwrap_or_default();
        if content.is_empty() {
            return Err(AttemptError::Fatal(LlmError::EmptyCompletion));
        }
        Ok(content)
    }

    fn record(&self, entry: RequestLogEntry) {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(entry);
    }
}

impl ChatModel for HttpChatClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        let body = self.payload(request)?;
        let _permit = self.in_flight.acquire();
        let total = self.config.max_retries + 1;
        let mut last = None;
        for n in 0..total {
            let result = self.attempt(&body);
            let outcome = match &result {
                Ok(_) => "ok".to_string(),
                Err(AttemptError::Retryable(e) | AttemptError::Fatal(e)) => e.to_string(),
            };
            let retry = matches!(result, Err(AttemptError::Retryable(_))) && n + 1 < total;
            let backoff = retry.then(|| self.backoff_for(n));
            self.record(RequestLogEntry {
                task_id: request.tag.task_id.clone(),
                attempt: n + 1,
                outcome,
                backoff_ms: backoff.map(|d| d.as_millis() as u64),
            });
            match result {
                Ok(text) => return Ok(text),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(e)) => {
                    tracing::warn!(task = %request.tag.task_id, attempt = n + 1, error = %e, "completion attempt failed");
                    last = Some(e);
                }
            }
            if let Some(delay) = backoff {
                thread::sleep(delay);
            }
        }
        Err(match last {
            Some(LlmError::Transport { detail, .. }) => LlmError::Transport {
                attempts: total,
                detail,
            },
            Some(other) => other,
            None => LlmError::Transport {
                attempts: total,
                detail: "no attempt made".into(),
            },
        })
    }

    fn label(&self) -> String {
        self.config.model.clone()
    }
}

fn excerpt(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((i, _)) => format!("{}…", &text[..i]),
        None => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let client = HttpChatClient::new(EndpointConfig {
            backoff_base_ms: 100,
            backoff_max_ms: 350,
            ..EndpointConfig::default()
        })
        .unwrap();
        assert_eq!(client.backoff_for(0), Duration::from_millis(100));
        assert_eq!(client.backoff_for(1), Duration::from_millis(200));
        assert_eq!(client.backoff_for(2), Duration::from_millis(350));
        assert_eq!(client.backoff_for(40), Duration::from_millis(350));
    }

    #[test]
    fn url_joins_base() {
        let client = HttpChatClient::new(EndpointConfig {
            base_url: "http://h:1/v1/".into(),
            ..EndpointConfig::default()
        })
        .unwrap();
        assert_eq!(client.endpoint_url(), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn excerpt_truncates_on_char_boundary() {
        assert_eq!(excerpt("abc", 5), "abc");
        assert_eq!(excerpt("অআইঈ", 2), "অআ…");
    }
}
