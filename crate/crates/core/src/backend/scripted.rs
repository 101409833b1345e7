//! Deterministic scripted backend: replays a queue of canned responses.
//!
//! Useful for counting contracts, order tests and replaying recorded
//! outputs. Optionally injects seeded per-request latencies so scheduling
//! effects can be exercised without a network.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Backend, BackendError, FinishReason, GenerationRequest, GenerationResult, TokenUsage};
use crate::tokens::{ApproxTokenCounter, TokenCounter};
use crate::util::derive_seed;

/// Seeded latency injection: request `i` sleeps a pseudo-random duration in
/// `0..max_ms` derived from `(seed, i)`.
#[derive(Debug, Clone, Copy)]
pub struct LatencyPlan {
    pub seed: u64,
    pub max_ms: u64,
}

impl LatencyPlan {
    fn delay(&self, index: usize) -> Duration {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[&index.to_string()]));
        Duration::from_millis(rng.gen_range(0..self.max_ms.max(1)))
    }
}

/// Replays queued responses in consumption order.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<GenerationResult>>,
    served: AtomicUsize,
    latency: Option<LatencyPlan>,
    counter: ApproxTokenCounter,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<GenerationResult>) -> Self {
        Self {
            queue: Mutex::new(responses.into()),
            served: AtomicUsize::new(0),
            latency: None,
            counter: ApproxTokenCounter::default(),
        }
    }

    /// Queues plain texts; usage is filled from the approximate counter.
    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        let responses = texts
            .into_iter()
            .map(|t| GenerationResult {
                text: t.into(),
                usage: TokenUsage::default(),
                token_logprobs: None,
                finish_reason: FinishReason::Stop,
            })
            .collect();
        Self::new(responses)
    }

    pub fn with_latency(mut self, plan: LatencyPlan) -> Self {
        self.latency = Some(plan);
        self
    }

    /// Responses consumed so far.
    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }

    /// Responses still queued.
    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script queue poisoned").len()
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        let (mut result, index) = {
            let mut queue = self.queue.lock().expect("script queue poisoned");
            let result = queue.pop_front().ok_or(BackendError::ScriptExhausted)?;
            (result, self.served.fetch_add(1, Ordering::SeqCst))
        };
        if let Some(plan) = self.latency {
            tokio::time::sleep(plan.delay(index)).await;
        }
        if result.usage.prompt_tokens == 0 {
            result.usage.prompt_tokens = self.counter.count(&request.prompt) as u64;
        }
        if result.usage.completion_tokens == 0 && !result.text.is_empty() {
            result.usage.completion_tokens = self.counter.count(&result.text) as u64;
        }
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{generate_batch, DecodeParams};

    fn request(prompt: &str) -> GenerationRequest {
        GenerationRequest::new(prompt, &DecodeParams::tuned_eval(), "direct")
    }

    #[tokio::test]
    async fn scripted_echoes_queued_text() {
        let backend = ScriptedBackend::from_texts(["x \\boxed{1}"]);
        let result = backend.generate(&request("p")).await.unwrap();
        assert_eq!(result.text, "x \\boxed{1}");
        assert!(result.usage.completion_tokens > 0);
    }

    #[tokio::test]
    async fn scripted_errors_when_exhausted() {
        let backend = ScriptedBackend::from_texts(Vec::<String>::new());
        let err = backend.generate(&request("p")).await.unwrap_err();
        assert!(matches!(err, BackendError::ScriptExhausted));
    }

    #[tokio::test]
    async fn batch_of_one_matches_single_generate() {
        let a = ScriptedBackend::from_texts(["only"]);
        let b = ScriptedBackend::from_texts(["only"]);
        let single = a.generate(&request("p")).await.unwrap();
        let batch = generate_batch(&b, &[request("p")], 4).await;
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0].as_ref().unwrap(), &single);
    }

    #[tokio::test]
    async fn batch_output_order_matches_input_order_across_latency_seeds() {
        for seed in 0..100 {
            let texts: Vec<String> = (0..16).map(|i| format!("response-{i}")).collect();
            let backend = ScriptedBackend::from_texts(texts).with_latency(LatencyPlan {
                seed,
                max_ms: 3,
            });
            let requests: Vec<GenerationRequest> =
                (0..16).map(|i| request(&format!("prompt-{i}"))).collect();
            let results = generate_batch(&backend, &requests, 8).await;
            for (i, result) in results.iter().enumerate() {
                assert_eq!(
                    result.as_ref().unwrap().text,
                    format!("response-{i}"),
                    "seed {seed}: result order diverged at {i}"
                );
            }
        }
    }

    #[tokio::test]
    async fn batch_carries_failures_in_band() {
        // Two queued responses for three requests: the last fails, the
        // first two still succeed.
        let backend = ScriptedBackend::from_texts(["a", "b"]);
        let requests: Vec<GenerationRequest> = (0..3).map(|i| request(&format!("p{i}"))).collect();
        let results = generate_batch(&backend, &requests, 2).await;
        assert!(results[0].is_ok());
        assert!(results[1].is_ok());
        assert!(matches!(results[2], Err(BackendError::ScriptExhausted)));
    }
}
