use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, LlmClient, LlmError, Usage};
use crate::limit::InFlightLimit;

pub const LLM_API_KEY_ENV: &str = "ACURAI_LLM_API_KEY";
pub const LLM_BASE_URL_ENV: &str = "ACURAI_LLM_BASE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpChatConfig {
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            timeout_secs: 60,
            max_attempts: 3,
            backoff_base_ms: 500,
            max_in_flight: 4,
        }
    }
}

impl HttpChatConfig {
    /// Defaults overridden by `ACURAI_LLM_BASE_URL` and `ACURAI_LLM_API_KEY`.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Ok(url) = std::env::var(LLM_BASE_URL_ENV) {
            c.base_url = url;
        }
        c.api_key = std::env::var(LLM_API_KEY_ENV).ok();
        c
    }
}

/// Client for chat-completions compatible endpoints
/// (`POST {base_url}/chat/completions`).
pub struct HttpChatClient {
    config: HttpChatConfig,
    client: reqwest::blocking::Client,
    limit: InFlightLimit,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: HttpChatConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            limit: InFlightLimit::new(config.max_in_flight),
            config,
            client,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: u32, retry_after: Option<u64>) -> Duration {
        let exp = Duration::from_millis(self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(10)));
        match retry_after {
            Some(s) => Duration::from_secs(s.min(30)).max(exp),
            None => exp,
        }
    }
}

impl LlmClient for HttpChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let _permit = self.limit.acquire();
        let max_attempts = self.config.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let mut req = self.client.post(self.endpoint()).json(request);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) if e.is_timeout() => return Err(LlmError::Timeout),
                Err(e) => return Err(LlmError::Transport(e.to_string())),
            };
            let status = resp.status().as_u16();
            if status == 401 || status == 403 {
                return Err(LlmError::Auth(format!("HTTP {status}")));
            }
            if status == 429 || (500..600).contains(&status) {
                let retry_after = resp
                    .headers()
                    .get(reqwest::header::RETRY_AFTER)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok());
                if attempt >= max_attempts {
                    return Err(if status == 429 {
                        LlmError::RateLimited {
                            attempts: attempt,
                            retry_after_secs: retry_after,
                        }
                    } else {
                        LlmError::Http { status, attempts: attempt }
                    });
                }
                tracing::debug!(status, attempt, "retrying chat request");
                std::thread::sleep(self.backoff(attempt, retry_after));
                continue;
            }
            if !(200..300).contains(&status) {
                return Err(LlmError::Http { status, attempts: attempt });
            }
            let body = resp.text().map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout
                } else {
                    LlmError::Transport(e.to_string())
                }
            })?;
            let wire: WireResponse = serde_json::from_str(&body).map_err(|e| LlmError::Malformed(e.to_string()))?;
            let content = wire
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| LlmError::Malformed("no message content".into()))?;
            return Ok(ChatResponse {
                content,
                model: wire.model.unwrap_or_else(|| request.model.clone()),
                usage: wire.usage.unwrap_or_default(),
                latency_ms: started.elapsed().as_millis() as u64,
            });
        }
    }
}
