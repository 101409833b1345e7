//! Token counting abstraction.
//!
//! Live backends report exact usage; everything computed locally (budget
//! enforcement, prompt-length filtering, thinking/summary splits) goes
//! through a [`TokenCounter`] so the approximation is swappable.

/// Counts tokens in a piece of text. Implementations must be stateless or
/// internally synchronized; counting happens concurrently across workers.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Byte-length heuristic: `ceil(bytes / bytes_per_token)`.
///
/// The default of 4 bytes per token tracks common BPE vocabularies closely
/// enough for budget enforcement without shipping a tokenizer.
#[derive(Debug, Clone, Copy)]
pub struct ApproxTokenCounter {
    bytes_per_token: usize,
}

impl ApproxTokenCounter {
    pub fn new(bytes_per_token: usize) -> Self {
        assert!(bytes_per_token >= 1, "bytes_per_token must be >= 1");
        Self { bytes_per_token }
    }
}

impl Default for ApproxTokenCounter {
    fn default() -> Self {
        Self::new(4)
    }
}

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(self.bytes_per_token)
    }
}
