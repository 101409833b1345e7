//! Test-time scaling harness built around generative self-refinement: a
//! single model samples candidate solutions in parallel, then synthesizes a
//! new solution from a prompt holding the problem and those candidates.
//!
//! The crate covers the full loop at desk scale:
//!
//! - boxed-answer extraction and exact-rational equivalence ([`answer`])
//! - bit-exact direct and refinement prompt rendering ([`prompt`])
//! - chat-completions, scripted and synthetic backends with a bounded
//!   concurrency batch contract ([`backend`])
//! - aggregation strategies: majority voting, Best-of-N, knockout
//!   tournaments, oracle pass@k, self-refinement, hierarchical combine
//!   ([`strategies`])
//! - exact-rational metrics, conditional buckets and scaling curves
//!   ([`metrics`]), with bundled reference tables ([`reference`])
//! - the hybrid SFT curation pipeline and reference NLL losses
//!   ([`curation`])
//! - a resumable experiment runner over an append-only JSONL log
//!   ([`harness`], [`runlog`]) and seeded Monte-Carlo studies ([`study`])

pub mod adapters;
pub mod answer;
pub mod backend;
pub mod curation;
pub mod harness;
pub mod metrics;
pub mod prompt;
pub mod reference;
pub mod runlog;
pub mod strategies;
pub mod study;
pub mod tokens;
pub mod util;

pub use answer::{
    answers_equivalent, extract_boxed, normalize_answer, normalize_text, verify, AnswerKind,
    NormalizedAnswer, RawAnswer, Verdict, VerdictReason,
};
pub use backend::{
    generate_batch, synthetic_refine, synthetic_sample, Backend, BackendError, DecodeParams,
    FinishReason, GenerationRequest, GenerationResult, HttpBackend, HttpBackendConfig,
    ScriptedBackend, SyntheticBackend, SyntheticKernel, TokenUsage,
};
pub use prompt::{
    build_direct_prompt, build_refinement_prompt, split_thinking_summary, truncate_candidate,
    AugmentedPrompt, CandidateGroup, CandidateResponse, DomainTag, Problem, PromptError,
    DEFAULT_PER_CANDIDATE_BUDGET,
};
pub use strategies::{
    best_of_n_knockout, best_of_n_scalar, group_nonoverlapping, hierarchical_refine,
    majority_vote, pass_at_k_oracle, self_refine, Cost, OracleScorer, PairwiseJudge, Preference,
    ScalarScorer, ScorerError, StrategyError, StrategyKind, StrategyOutcome,
};
pub use metrics::{
    aggregate_available, aggregate_run, bucket_by_correct_count, expected_accuracy, ratio_tenths,
    token_composition, BenchmarkReport, ConditionalBucket, MetricsError, RunContract, RunReport,
    ScalingCurve, TokenStats,
};
pub use curation::{
    combine_losses, filter_pass_rate, filter_prompt_length, merge_hybrid, nll_loss,
    retain_teacher_solutions, run_pipeline, select_candidate_set, CurationConfig, CurationError,
    CurationInput, CurationOutput, Generation, RawPoolRecord, RefinementExample, SftRecord,
    SftTask,
};
pub use harness::{resume_run, run_experiment, HarnessError, RunConfig};
pub use study::{run_conditional_study, StudySummary};
pub use tokens::{ApproxTokenCounter, TokenCounter};
