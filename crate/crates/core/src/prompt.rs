//! Prompt construction for the two inference modes.
//!
//! Direct mode wraps a problem statement with the boxed-answer instruction.
//! Refinement mode builds the augmented prompt: the same problem block
//! followed by labeled candidate-response summaries. Both renderings are
//! driven by the template files under `templates/`, which define the exact
//! bytes; the golden tests pin them.

use serde::{Deserialize, Serialize};

use crate::answer::Verdict;
use crate::backend::TokenUsage;
use crate::tokens::TokenCounter;

/// Template for direct answering: statement plus instruction line.
pub const DIRECT_TEMPLATE: &str = include_str!("../templates/direct.txt");

/// Header of the self-refinement prompt, up to and including the boxed
/// instruction. Candidate blocks are appended after it.
pub const REFINEMENT_TEMPLATE: &str = include_str!("../templates/self_refinement.txt");

/// Delimiter that closes the thinking section of a reasoning model's output.
pub const THINK_CLOSE: &str = "</think>";
const THINK_OPEN: &str = "<think>";

/// Marker appended to a candidate summary cut down to fit its token budget.
pub const TRUNCATION_MARKER: &str = "…[truncated]";

/// Default per-candidate token budget: the 6144-token candidate input budget
/// divided evenly over four candidates.
pub const DEFAULT_PER_CANDIDATE_BUDGET: usize = 1536;
/// Total candidate-input budget for a four-candidate prompt.
pub const CANDIDATE_INPUT_BUDGET: usize = 6144;
/// Alternative per-candidate budget quoted alongside the total; note
/// 4 x 1566 != 6144. Both constants are exposed, the divisible one is the
/// default.
pub const ALT_PER_CANDIDATE_BUDGET: usize = 1566;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    #[default]
    Math,
    Logic,
    Other,
}

/// A query with optional ground truth; the atomic unit of every pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub domain_tag: DomainTag,
}

impl Problem {
    pub fn new(id: impl Into<String>, statement: impl Into<String>, ground_truth: Option<String>) -> Self {
        Self {
            id: id.into(),
            statement: statement.into(),
            ground_truth,
            domain_tag: DomainTag::Math,
        }
    }
}

/// One sampled solution, split into thinking and summary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub sample_index: u32,
    pub raw_text: String,
    pub thinking: String,
    pub summary: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verdict: Option<Verdict>,
    pub usage: TokenUsage,
}

impl CandidateResponse {
    /// Builds a candidate from a raw generation, splitting thinking from
    /// summary and filling in the usage split. Backend-reported completion
    /// counts are kept; a zero count falls back to the approximate counter.
    pub fn from_generation(
        sample_index: u32,
        raw_text: impl Into<String>,
        mut usage: TokenUsage,
        counter: &dyn TokenCounter,
    ) -> Self {
        let raw_text = raw_text.into();
        let (thinking, summary) = split_thinking_summary(&raw_text);
        if usage.completion_tokens == 0 && !raw_text.is_empty() {
            usage.completion_tokens = counter.count(&raw_text) as u64;
        }
        let thinking_tokens = (counter.count(&thinking) as u64).min(usage.completion_tokens);
        usage.thinking_tokens = thinking_tokens;
        usage.summary_tokens = usage.completion_tokens - thinking_tokens;
        Self {
            sample_index,
            raw_text,
            thinking,
            summary,
            verdict: None,
            usage,
        }
    }

    pub fn with_verdict(mut self, verdict: Verdict) -> Self {
        self.verdict = Some(verdict);
        self
    }
}

/// An ordered set of K candidates for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGroup {
    pub problem_id: String,
    pub candidates: Vec<CandidateResponse>,
    pub k: usize,
}

impl CandidateGroup {
    pub fn new(problem_id: impl Into<String>, candidates: Vec<CandidateResponse>) -> Result<Self, PromptError> {
        if candidates.is_empty() {
            return Err(PromptError::EmptyGroup);
        }
        for pair in candidates.windows(2) {
            if pair[1].sample_index <= pair[0].sample_index {
                return Err(PromptError::UnorderedSamples);
            }
        }
        let k = candidates.len();
        Ok(Self {
            problem_id: problem_id.into(),
            candidates,
            k,
        })
    }

    /// Number of candidates whose verdict is correct. None if any candidate
    /// is unverified.
    pub fn n_correct(&self) -> Option<u32> {
        let mut n = 0;
        for c in &self.candidates {
            match &c.verdict {
                Some(v) if v.correct => n += 1,
                Some(_) => {}
                None => return None,
            }
        }
        Some(n)
    }
}

/// The rendered augmented prompt for self-refinement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    pub text: String,
    pub problem_id: String,
    pub candidate_count: usize,
    pub truncated_flags: Vec<bool>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("problem statement is empty")]
    EmptyStatement,
    #[error("candidate group is empty")]
    EmptyGroup,
    #[error("candidate sample indices must be strictly increasing")]
    UnorderedSamples,
    #[error("candidate {index} has an empty summary")]
    EmptyCandidateSummary { index: usize },
    #[error("per-candidate budget {budget} is below the truncation marker cost {marker_cost}")]
    BudgetTooSmall { budget: usize, marker_cost: usize },
}

/// Splits a raw model output at the last `</think>` delimiter.
///
/// A single leading `<think>` tag is dropped from the thinking part and the
/// summary's leading whitespace is trimmed. Without a delimiter the whole
/// text is the summary: non-thinking outputs are already summaries.
pub fn split_thinking_summary(raw_text: &str) -> (String, String) {
    match raw_text.rfind(THINK_CLOSE) {
        None => (String::new(), raw_text.to_string()),
        Some(idx) => {
            let prefix = &raw_text[..idx];
            let thinking = prefix.strip_prefix(THINK_OPEN).unwrap_or(prefix);
            let summary = raw_text[idx + THINK_CLOSE.len()..].trim_start();
            (thinking.to_string(), summary.to_string())
        }
    }
}

/// Renders the direct-answer prompt: the statement followed by the boxed
/// instruction line. Byte-stable across runs.
pub fn build_direct_prompt(problem: &Problem) -> Result<String, PromptError> {
    if problem.statement.is_empty() {
        return Err(PromptError::EmptyStatement);
    }
    Ok(DIRECT_TEMPLATE.replace("{problem}", &problem.statement))
}

/// Enforces the per-candidate token budget on one summary.
///
/// Over-budget summaries are tail-cut at the largest prefix that fits within
/// the budget minus the marker cost, and the literal truncation marker is
/// appended. The returned text always re-counts within the budget.
pub fn truncate_candidate(
    summary: &str,
    per_candidate_budget: usize,
    counter: &dyn TokenCounter,
) -> Result<(String, bool), PromptError> {
    let marker_cost = counter.count(TRUNCATION_MARKER);
    if per_candidate_budget < marker_cost {
        return Err(PromptError::BudgetTooSmall {
            budget: per_candidate_budget,
            marker_cost,
        });
    }
    if counter.count(summary) <= per_candidate_budget {
        return Ok((summary.to_string(), false));
    }

    let prefix_budget = per_candidate_budget - marker_cost;
    let boundaries: Vec<usize> = summary
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(summary.len()))
        .collect();
    // Largest prefix within the remaining budget; counters are assumed
    // monotone in prefix length, which holds for byte-based approximations.
    let mut lo = 0usize;
    let mut hi = boundaries.len() - 1;
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if counter.count(&summary[..boundaries[mid]]) <= prefix_budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let mut end = boundaries[lo];
    let mut text = format!("{}{}", &summary[..end], TRUNCATION_MARKER);
    // Guard for counters where prefix + marker counts above the parts.
    while counter.count(&text) > per_candidate_budget && end > 0 {
        end = summary[..end]
            .char_indices()
            .last()
            .map(|(i, _)| i)
            .unwrap_or(0);
        text = format!("{}{}", &summary[..end], TRUNCATION_MARKER);
    }
    Ok((text, true))
}

/// Renders the self-refinement prompt for a candidate group.
///
/// The header comes verbatim from the template file; candidate summaries are
/// appended as "Candidate Response i:" blocks in sample order, each budget
/// enforced through [`truncate_candidate`].
pub fn build_refinement_prompt(
    problem: &Problem,
    group: &CandidateGroup,
    per_candidate_budget: usize,
    counter: &dyn TokenCounter,
) -> Result<AugmentedPrompt, PromptError> {
    if problem.statement.is_empty() {
        return Err(PromptError::EmptyStatement);
    }
    if group.candidates.is_empty() {
        return Err(PromptError::EmptyGroup);
    }
    let mut text = REFINEMENT_TEMPLATE.replace("{problem}", &problem.statement);
    let mut truncated_flags = Vec::with_capacity(group.candidates.len());
    for (i, candidate) in group.candidates.iter().enumerate() {
        if candidate.summary.is_empty() {
            return Err(PromptError::EmptyCandidateSummary { index: i });
        }
        let (summary, truncated) =
            truncate_candidate(&candidate.summary, per_candidate_budget, counter)?;
        truncated_flags.push(truncated);
        text.push_str(&format!("\nCandidate Response {}:\n{}", i + 1, summary));
        if i + 1 < group.candidates.len() {
            text.push('\n');
        }
    }
    Ok(AugmentedPrompt {
        text,
        problem_id: group.problem_id.clone(),
        candidate_count: group.candidates.len(),
        truncated_flags,
    })
}
