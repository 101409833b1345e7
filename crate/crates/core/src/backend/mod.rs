//! Completion backends: a live chat-completions client, a deterministic
//! scripted backend, and a statistical synthetic backend, all behind one
//! trait with a bounded-concurrency batch operation.

mod http;
mod scripted;
mod synthetic;

pub use http::{HttpBackend, HttpBackendConfig, RetryPolicy};
pub use scripted::{LatencyPlan, ScriptedBackend};
pub use synthetic::{synthetic_refine, synthetic_sample, SyntheticBackend, SyntheticKernel};

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

/// Decoding parameters shared by a phase's requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl DecodeParams {
    /// Evaluation regime for the refinement-trained model: long outputs at
    /// moderate temperature.
    pub fn tuned_eval() -> Self {
        Self {
            max_new_tokens: 32_768,
            temperature: 0.6,
            top_p: 0.95,
            seed: None,
        }
    }

    /// Diversity-oriented candidate sampling regime used for base models.
    pub fn base_sampling() -> Self {
        Self {
            max_new_tokens: 4_096,
            temperature: 1.0,
            top_p: 0.95,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// One generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// Free-form routing tag, e.g. "direct" or "refine".
    pub tag: String,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, decode: &DecodeParams, tag: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_new_tokens: decode.max_new_tokens,
            temperature: decode.temperature,
            top_p: decode.top_p,
            seed: decode.seed,
            tag: tag.into(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens < 1 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest("top_p must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Digest identifying this request in run logs.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("request serializes");
        crate::util::sha256_hex(canonical.as_bytes())
    }
}

/// Token accounting for one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub thinking_tokens: u64,
    pub summary_tokens: u64,
}

impl TokenUsage {
    /// Whether the thinking/summary split has been filled in.
    pub fn split_available(&self) -> bool {
        self.thinking_tokens + self.summary_tokens == self.completion_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

/// One generation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub usage: TokenUsage,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: FinishReason,
}

impl GenerationResult {
    /// Enforces the logprob contract: one finite non-positive entry per
    /// completion token.
    pub fn validate(&self) -> Result<(), BackendError> {
        if let Some(lps) = &self.token_logprobs {
            if lps.len() as u64 != self.usage.completion_tokens {
                return Err(BackendError::Protocol(format!(
                    "logprob count {} != completion tokens {}",
                    lps.len(),
                    self.usage.completion_tokens
                )));
            }
            if let Some(bad) = lps.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
                return Err(BackendError::Protocol(format!("invalid token logprob {bad}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Transient transport failure that exhausted its retries.
    #[error("transport failure after retries: {0}")]
    Retryable(String),
    /// Response arrived but could not be interpreted.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// The server rejected the request; retrying will not help.
    #[error("permanent error (status {status}): {message}")]
    Permanent { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("problem {0} has no ground truth")]
    MissingGroundTruth(String),
    #[error("no per-problem success probability configured for {0}")]
    UnknownProblem(String),
    #[error("candidate {0} is missing a verdict")]
    MissingVerdict(usize),
    #[error("no recovery probability configured for n_correct = {0}")]
    MissingRecovery(u32),
    #[error("scripted backend queue is exhausted")]
    ScriptExhausted,
}

impl BackendError {
    pub fn is_permanent(&self) -> bool {
        !matches!(self, BackendError::Retryable(_))
    }
}

/// A completion source. Implementations must be shareable across workers.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

/// Runs a batch of requests with at most `max_in_flight` outstanding at any
/// instant. Results come back in request order regardless of completion
/// order; per-request failures are carried in-band so one straggler cannot
/// abort the batch.
pub async fn generate_batch(
    backend: &dyn Backend,
    requests: &[GenerationRequest],
    max_in_flight: usize,
) -> Vec<Result<GenerationResult, BackendError>> {
    let max_in_flight = max_in_flight.max(1);
    stream::iter(requests)
        .map(|request| backend.generate(request))
        .buffered(max_in_flight)
        .collect()
        .await
}
