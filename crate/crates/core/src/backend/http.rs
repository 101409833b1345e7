//! Live chat-completions wire client.
//!
//! POSTs to `{base_url}/v1/chat/completions` with a single user message per
//! request, bearer-token auth, and retries transient failures with
//! exponential backoff and jitter.

use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, FinishReason, GenerationRequest, GenerationResult, TokenUsage};
use crate::tokens::{ApproxTokenCounter, TokenCounter};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 250,
            max_delay_ms: 4_000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << attempt.min(16));
        let capped = exp.min(self.max_delay_ms);
        let jitter = rand::thread_rng().gen_range(0..=capped / 4 + 1);
        Duration::from_millis(capped + jitter)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub api_token: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Ask the server for per-token logprobs (needed for loss references).
    #[serde(default)]
    pub request_logprobs: bool,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    600
}

pub struct HttpBackend {
    client: reqwest::Client,
    config: HttpBackendConfig,
    counter: ApproxTokenCounter,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("http client: {e}")))?;
        Ok(Self {
            client,
            config,
            counter: ApproxTokenCounter::default(),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &GenerationRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_new_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        if self.config.request_logprobs {
            body["logprobs"] = json!(true);
        }
        body
    }

    async fn attempt(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let mut builder = self.client.post(self.endpoint()).json(&self.body(request));
        if let Some(token) = &self.config.api_token {
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| BackendError::Retryable(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Retryable(format!("status {status}")));
        }
        if status.is_client_error() {
            let message = response.text().await.unwrap_or_default();
            return Err(BackendError::Permanent {
                status: status.as_u16(),
                message,
            });
        }
        let body: ChatResponse = response
            .json()
            .await
            .map_err(|e| BackendError::Protocol(format!("body: {e}")))?;
        self.parse(request, body)
    }

    fn parse(&self, request: &GenerationRequest, body: ChatResponse) -> Result<GenerationResult, BackendError> {
        let choice = body
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("no choices in response".into()))?;
        let text = choice
            .message
            .ok_or_else(|| BackendError::Protocol("choice has no message".into()))?
            .content
            .unwrap_or_default();
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("error") => FinishReason::Error,
            _ => FinishReason::Stop,
        };
        let token_logprobs = choice
            .logprobs
            .and_then(|lp| lp.content)
            .map(|entries| entries.into_iter().map(|e| e.logprob).collect::<Vec<f64>>());
        // Prefer server-reported usage; fall back to the approximate counter.
        let (prompt_tokens, completion_tokens) = match body.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (
                self.counter.count(&request.prompt) as u64,
                self.counter.count(&text) as u64,
            ),
        };
        let result = GenerationResult {
            text,
            usage: TokenUsage {
                prompt_tokens,
                completion_tokens,
                thinking_tokens: 0,
                summary_tokens: 0,
            },
            token_logprobs,
            finish_reason,
        };
        result.validate()?;
        Ok(result)
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        let mut last_error = None;
        for attempt in 0..self.config.retry.max_attempts {
            match self.attempt(request).await {
                Ok(result) => return Ok(result),
                Err(e) if e.is_permanent() => return Err(e),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "transient backend failure, backing off");
                    last_error = Some(e);
                    if attempt + 1 < self.config.retry.max_attempts {
                        tokio::time::sleep(self.config.retry.delay(attempt)).await;
                    }
                }
            }
        }
        Err(last_error.unwrap_or_else(|| BackendError::Retryable("no attempts made".into())))
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Option<Message>,
    finish_reason: Option<String>,
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    content: Option<Vec<LogprobEntry>>,
}

#[derive(Debug, Deserialize)]
struct LogprobEntry {
    logprob: f64,
}

#[derive(Debug, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}
