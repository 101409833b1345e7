//! Turns persisted per-sample outcomes into report tables: headline
//! accuracies, conditional buckets keyed by the number of correct
//! candidates, input-scaling curves, and token-composition shares.
//!
//! Every ratio is computed in exact integer/rational arithmetic and rounded
//! half-up to one decimal only at the edge, so reports are independent of
//! record order and reproduce published tables digit for digit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, DecodeParams, GenerationResult};
use crate::prompt::{CandidateGroup, CandidateResponse, Problem};
use crate::runlog::{Phase, RunRecord};
use crate::strategies::{
    self, group_nonoverlapping, OracleScorer, StrategyError, StrategyKind,
};
use crate::tokens::TokenCounter;
use crate::util::derive_seed;
use crate::answer::Verdict;

/// Percent in tenths (one decimal), rounded half-up: `round(1000 * n / d)`.
pub fn ratio_tenths(numer: u64, denom: u64) -> i64 {
    assert!(denom > 0, "ratio denominator must be positive");
    let n = numer as u128 * 1000;
    let d = denom as u128;
    ((2 * n + d) / (2 * d)) as i64
}

/// Renders tenths as a one-decimal percent value.
pub fn tenths_to_percent(tenths: i64) -> f64 {
    tenths as f64 / 10.0
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("groups of mixed size: expected k={expected}, found k={found}")]
    MixedGroupSize { expected: usize, found: usize },
    #[error("no buckets with nonzero totals")]
    EmptyBuckets,
    #[error("run log is empty")]
    EmptyLog,
    #[error("log incomplete; {} missing cells, first: {:?}", gaps.len(), gaps.first())]
    MissingSamples { gaps: Vec<Gap> },
    #[error("problem {problem_id} has {have} samples, need {need}")]
    InsufficientSamples {
        problem_id: String,
        have: usize,
        need: usize,
    },
    #[error("strategy evaluation failed: {0}")]
    Strategy(String),
}

impl From<StrategyError> for MetricsError {
    fn from(e: StrategyError) -> Self {
        MetricsError::Strategy(e.to_string())
    }
}

/// A missing (problem, trial, phase) cell in a run log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub problem_id: String,
    pub trial: u32,
    pub phase: Phase,
}

/// One row of the conditional-accuracy table: refinement outcomes over
/// groups that contained exactly `n_correct` correct candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionalBucket {
    pub n_correct: u32,
    pub correct: u64,
    pub wrong: u64,
    pub total: u64,
    /// Percent in tenths, rounded half-up; 0 for an empty bucket.
    pub ratio_tenths: i64,
}

impl ConditionalBucket {
    pub fn from_counts(n_correct: u32, correct: u64, wrong: u64) -> Self {
        let total = correct + wrong;
        let ratio = if total > 0 { ratio_tenths(correct, total) } else { 0 };
        Self {
            n_correct,
            correct,
            wrong,
            total,
            ratio_tenths: ratio,
        }
    }

    /// Reconstructs a bucket from a stated ratio (e.g. a published table
    /// row) and a total; counts are back-filled consistently.
    pub fn from_ratio(n_correct: u32, total: u64, ratio_tenths: i64) -> Self {
        let correct = ((2 * (total as u128) * (ratio_tenths as u128) + 1000) / 2000) as u64;
        Self {
            n_correct,
            correct,
            wrong: total - correct,
            total,
            ratio_tenths,
        }
    }

    pub fn ratio_percent(&self) -> f64 {
        tenths_to_percent(self.ratio_tenths)
    }
}

/// Buckets refinement verdicts by the group's number of correct candidates.
/// All groups must share one k; the result has k+1 buckets (0..=k).
pub fn bucket_by_correct_count(
    groups: &[(&CandidateGroup, &Verdict)],
) -> Result<Vec<ConditionalBucket>, MetricsError> {
    let Some(((first, _), rest)) = groups.split_first() else {
        return Err(MetricsError::EmptyLog);
    };
    let k = first.k;
    for (g, _) in rest {
        if g.k != k {
            return Err(MetricsError::MixedGroupSize {
                expected: k,
                found: g.k,
            });
        }
    }
    let mut correct = vec![0u64; k + 1];
    let mut wrong = vec![0u64; k + 1];
    for (group, verdict) in groups {
        let n = group
            .n_correct()
            .ok_or(MetricsError::Strategy("group has unverified candidates".into()))?
            as usize;
        if verdict.correct {
            correct[n] += 1;
        } else {
            wrong[n] += 1;
        }
    }
    Ok((0..=k)
        .map(|n| ConditionalBucket::from_counts(n as u32, correct[n], wrong[n]))
        .collect())
}

/// Law-of-total-probability roll-up: the total-weighted mean of the stated
/// bucket ratios, in tenths. Empty buckets (total 0) contribute nothing.
pub fn expected_accuracy(buckets: &[ConditionalBucket]) -> Result<i64, MetricsError> {
    let denom: u128 = buckets.iter().map(|b| b.total as u128).sum();
    if denom == 0 {
        return Err(MetricsError::EmptyBuckets);
    }
    let numer: u128 = buckets
        .iter()
        .map(|b| b.total as u128 * b.ratio_tenths as u128)
        .sum();
    Ok(((2 * numer + denom) / (2 * denom)) as i64)
}

/// Mean token composition over generations that carry a thinking/summary
/// split; results without one are skipped and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TokenStats {
    pub counted: usize,
    pub skipped_missing_split: usize,
    pub mean_total: f64,
    pub mean_thinking: f64,
    pub mean_summary: f64,
    /// `100 * sum(summary) / sum(total)` in tenths.
    pub summary_share_tenths: i64,
}

pub fn token_composition(results: &[&GenerationResult]) -> TokenStats {
    let mut counted = 0usize;
    let mut skipped = 0usize;
    let (mut total, mut thinking, mut summary) = (0u64, 0u64, 0u64);
    for r in results {
        if r.usage.split_available() && r.usage.completion_tokens > 0 {
            counted += 1;
            total += r.usage.completion_tokens;
            thinking += r.usage.thinking_tokens;
            summary += r.usage.summary_tokens;
        } else {
            skipped += 1;
        }
    }
    let mean = |sum: u64| if counted > 0 { sum as f64 / counted as f64 } else { 0.0 };
    TokenStats {
        counted,
        skipped_missing_split: skipped,
        mean_total: mean(total),
        mean_thinking: mean(thinking),
        mean_summary: mean(summary),
        summary_share_tenths: if total > 0 { ratio_tenths(summary, total) } else { 0 },
    }
}

/// What a complete run must contain for one benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunContract {
    pub benchmark: String,
    pub problems: Vec<Problem>,
    pub k: usize,
    pub trials: u32,
    pub strategies: Vec<StrategyKind>,
}

/// Aggregated metrics for one benchmark. Percents are tenths; absent cells
/// stay `None` (a strategy that was not configured is not imputed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub benchmark: String,
    pub k: usize,
    pub trials: u32,
    pub samples: u64,
    pub groups: u64,
    pub pass1_tenths: Option<i64>,
    pub majority_tenths: Option<i64>,
    pub bon_tenths: Option<i64>,
    pub self_refine_tenths: Option<i64>,
    pub oracle_tenths: Option<i64>,
    pub buckets: Vec<ConditionalBucket>,
    pub token_stats: Option<TokenStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub benchmarks: Vec<BenchmarkReport>,
}

/// Strict aggregation: errors if any contracted cell is missing.
pub fn aggregate_run(
    records: &[RunRecord],
    contracts: &[RunContract],
) -> Result<RunReport, MetricsError> {
    let (report, gaps) = aggregate_available(records, contracts)?;
    if !gaps.is_empty() {
        return Err(MetricsError::MissingSamples { gaps });
    }
    Ok(report)
}

/// Lenient aggregation: computes over whatever complete cells exist and
/// reports the gaps. Everything is derived purely from the log; nothing is
/// re-generated.
pub fn aggregate_available(
    records: &[RunRecord],
    contracts: &[RunContract],
) -> Result<(RunReport, Vec<Gap>), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let counter = crate::tokens::ApproxTokenCounter::default();

    // Index records; BTreeMaps keep every later reduction order-independent.
    let mut candidates: BTreeMap<(&str, u32), BTreeMap<u32, &RunRecord>> = BTreeMap::new();
    let mut refinements: BTreeMap<(&str, u32), &RunRecord> = BTreeMap::new();
    for r in records {
        match r.phase {
            Phase::Candidate => {
                candidates
                    .entry((r.problem_id.as_str(), r.trial))
                    .or_default()
                    .insert(r.sample_index, r);
            }
            Phase::Refinement => {
                refinements.insert((r.problem_id.as_str(), r.trial), r);
            }
        }
    }

    let mut gaps = Vec::new();
    let mut benchmarks = Vec::new();
    for contract in contracts {
        let want_refine = contract.strategies.contains(&StrategyKind::SelfRefine);
        let mut sample_total = 0u64;
        let mut sample_correct = 0u64;
        let mut group_rows: Vec<(CandidateGroup, Option<&RunRecord>)> = Vec::new();
        let mut candidate_results: Vec<&GenerationResult> = Vec::new();

        for problem in &contract.problems {
            for trial in 0..contract.trials {
                let cell = candidates.get(&(problem.id.as_str(), trial));
                let complete = cell.is_some_and(|m| {
                    (0..contract.k as u32).all(|s| m.contains_key(&s))
                });
                if !complete {
                    gaps.push(Gap {
                        problem_id: problem.id.clone(),
                        trial,
                        phase: Phase::Candidate,
                    });
                }
                if let Some(m) = cell {
                    for r in m.values() {
                        sample_total += 1;
                        if r.verdict.as_ref().is_some_and(|v| v.correct) {
                            sample_correct += 1;
                        }
                        candidate_results.push(&r.result);
                    }
                }
                if !complete {
                    continue;
                }
                let m = cell.expect("complete cell");
                let members: Vec<CandidateResponse> = (0..contract.k as u32)
                    .map(|s| {
                        let r = m[&s];
                        let mut c = CandidateResponse::from_generation(
                            s,
                            r.result.text.clone(),
                            r.result.usage,
                            &counter,
                        );
                        c.verdict = r.verdict.clone();
                        c
                    })
                    .collect();
                let group = CandidateGroup::new(&problem.id, members)
                    .map_err(|e| MetricsError::Strategy(e.to_string()))?;
                let refinement = refinements.get(&(problem.id.as_str(), trial)).copied();
                if want_refine && refinement.is_none() {
                    gaps.push(Gap {
                        problem_id: problem.id.clone(),
                        trial,
                        phase: Phase::Refinement,
                    });
                }
                group_rows.push((group, refinement));
            }
        }

        let groups = group_rows.len() as u64;
        let mut majority_correct = 0u64;
        let mut bon_correct = 0u64;
        let mut oracle_correct = 0u64;
        let mut refine_correct = 0u64;
        let mut refine_total = 0u64;
        let mut bucket_input: Vec<(&CandidateGroup, &Verdict)> = Vec::new();

        let problem_by_id: BTreeMap<&str, &Problem> =
            contract.problems.iter().map(|p| (p.id.as_str(), p)).collect();
        let want = |s: StrategyKind| contract.strategies.contains(&s);
        for (group, refinement) in &group_rows {
            let problem = problem_by_id[group.problem_id.as_str()];
            if want(StrategyKind::Majority) && strategies::majority_vote(group)?.correct {
                majority_correct += 1;
            }
            if want(StrategyKind::BonScalar) {
                if strategies::best_of_n_scalar(problem, group, &OracleScorer)?.correct {
                    bon_correct += 1;
                }
            } else if want(StrategyKind::BonKnockout)
                && strategies::best_of_n_knockout(problem, group, &OracleScorer)?.correct
            {
                bon_correct += 1;
            }
            if strategies::pass_at_k_oracle(group)?.correct {
                oracle_correct += 1;
            }
            if let Some(r) = refinement {
                refine_total += 1;
                if let Some(v) = &r.verdict {
                    if v.correct {
                        refine_correct += 1;
                    }
                    bucket_input.push((group, v));
                }
            }
        }

        let buckets = if bucket_input.is_empty() {
            Vec::new()
        } else {
            bucket_by_correct_count(&bucket_input)?
        };

        benchmarks.push(BenchmarkReport {
            benchmark: contract.benchmark.clone(),
            k: contract.k,
            trials: contract.trials,
            samples: sample_total,
            groups,
            pass1_tenths: (want(StrategyKind::Pass1) && sample_total > 0)
                .then(|| ratio_tenths(sample_correct, sample_total)),
            majority_tenths: (want(StrategyKind::Majority) && groups > 0)
                .then(|| ratio_tenths(majority_correct, groups)),
            bon_tenths: ((want(StrategyKind::BonScalar) || want(StrategyKind::BonKnockout))
                && groups > 0)
                .then(|| ratio_tenths(bon_correct, groups)),
            self_refine_tenths: (want(StrategyKind::SelfRefine) && refine_total > 0)
                .then(|| ratio_tenths(refine_correct, refine_total)),
            oracle_tenths: (want(StrategyKind::PasskOracle) && groups > 0)
                .then(|| ratio_tenths(oracle_correct, groups)),
            buckets,
            token_stats: (!candidate_results.is_empty())
                .then(|| token_composition(&candidate_results)),
        });
    }
    Ok((RunReport { benchmarks }, gaps))
}

/// Accuracy-vs-k curves for one strategy set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScalingCurve {
    /// Strategy -> ordered (k, percent tenths) points.
    pub points: BTreeMap<StrategyKind, Vec<(usize, i64)>>,
}

/// Evaluates strategies on non-overlapping groups of each `k`, reusing one
/// sample pool. The oracle curve on a fixed pool is monotone in k.
#[allow(clippy::too_many_arguments)]
pub async fn input_scaling_curve(
    problems: &[Problem],
    pool: &BTreeMap<String, Vec<CandidateResponse>>,
    strategies_to_run: &[StrategyKind],
    k_values: &[usize],
    backend: &dyn Backend,
    decode: &DecodeParams,
    per_candidate_budget: usize,
    counter: &dyn TokenCounter,
) -> Result<ScalingCurve, MetricsError> {
    let mut ks: Vec<usize> = k_values.iter().copied().filter(|k| *k >= 1).collect();
    ks.sort_unstable();
    ks.dedup();
    let need = ks.last().copied().unwrap_or(1);
    for problem in problems {
        let have = pool.get(&problem.id).map_or(0, Vec::len);
        if have < need {
            return Err(MetricsError::InsufficientSamples {
                problem_id: problem.id.clone(),
                have,
                need,
            });
        }
    }

    let mut curve = ScalingCurve::default();
    for &k in &ks {
        let mut counts: BTreeMap<StrategyKind, (u64, u64)> = BTreeMap::new();
        for problem in problems {
            let samples = pool[&problem.id].clone();
            let groups = group_nonoverlapping(&problem.id, samples, k)?;
            for (gi, group) in groups.iter().enumerate() {
                for &strategy in strategies_to_run {
                    let correct = match strategy {
                        StrategyKind::Pass1 => {
                            // Mean per-sample correctness over the group.
                            let entry = counts.entry(strategy).or_default();
                            entry.0 += group.n_correct().unwrap_or(0) as u64;
                            entry.1 += group.k as u64;
                            continue;
                        }
                        StrategyKind::Majority => strategies::majority_vote(group)?.correct,
                        StrategyKind::BonScalar => {
                            strategies::best_of_n_scalar(problem, group, &OracleScorer)?.correct
                        }
                        StrategyKind::BonKnockout => {
                            strategies::best_of_n_knockout(problem, group, &OracleScorer)?.correct
                        }
                        StrategyKind::PasskOracle => strategies::pass_at_k_oracle(group)?.correct,
                        StrategyKind::SelfRefine | StrategyKind::Hierarchical => {
                            let mut d = decode.clone();
                            if let Some(seed) = decode.seed {
                                d.seed = Some(derive_seed(
                                    seed,
                                    &["curve", &problem.id, &k.to_string(), &gi.to_string()],
                                ));
                            }
                            strategies::self_refine(
                                problem,
                                group,
                                backend,
                                &d,
                                per_candidate_budget,
                                counter,
                            )
                            .await?
                            .outcome
                            .correct
                        }
                    };
                    let entry = counts.entry(strategy).or_default();
                    entry.0 += u64::from(correct);
                    entry.1 += 1;
                }
            }
        }
        for (strategy, (correct, total)) in counts {
            if total > 0 {
                curve
                    .points
                    .entry(strategy)
                    .or_default()
                    .push((k, ratio_tenths(correct, total)));
            }
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::{verify, VerdictReason};
    use crate::backend::{FinishReason, SyntheticBackend, SyntheticKernel, TokenUsage};
    use crate::tokens::ApproxTokenCounter;

    fn bucket(n: u32, correct: u64, wrong: u64) -> ConditionalBucket {
        ConditionalBucket::from_counts(n, correct, wrong)
    }

    #[test]
    fn ratio_tenths_rounds_half_up() {
        assert_eq!(ratio_tenths(16, 272), 59); // 5.882 -> 5.9
        assert_eq!(ratio_tenths(24, 128), 188); // 18.75 -> 18.8
        assert_eq!(ratio_tenths(634, 960), 660); // 66.04 -> 66.0
        assert_eq!(ratio_tenths(688, 960), 717); // 71.67 -> 71.7
        assert_eq!(ratio_tenths(1924, 3840), 501); // 50.10 -> 50.1
        assert_eq!(ratio_tenths(1, 1), 1000);
        assert_eq!(ratio_tenths(0, 7), 0);
    }

    #[test]
    fn bucket_counts_and_ratio() {
        let b = bucket(0, 16, 256);
        assert_eq!(b.total, 272);
        assert_eq!(b.ratio_tenths, 59);
        assert_eq!(b.ratio_percent(), 5.9);
        assert_eq!(b.correct + b.wrong, b.total);
    }

    #[test]
    fn bucket_from_ratio_reconstruction() {
        // 94.4% of 144 -> 136 correct, recomputing gives 94.4 again.
        let b = ConditionalBucket::from_ratio(2, 144, 944);
        assert_eq!(b.correct, 136);
        assert_eq!(ratio_tenths(b.correct, b.total), 944);
        let b = ConditionalBucket::from_ratio(1, 128, 188);
        assert_eq!(b.correct, 24);
    }

    fn verified_group(problem_id: &str, answers: &[&str], truth: &str) -> CandidateGroup {
        let counter = ApproxTokenCounter::default();
        let candidates = answers
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let text = format!("x \\boxed{{{a}}}");
                CandidateResponse::from_generation(i as u32, text.clone(), TokenUsage::default(), &counter)
                    .with_verdict(verify(&text, truth))
            })
            .collect();
        CandidateGroup::new(problem_id, candidates).unwrap()
    }

    #[test]
    fn bucketing_counts_by_n_correct() {
        let truth = "1";
        let g0 = verified_group("p", &["2", "3", "4", "5"], truth);
        let g2 = verified_group("p", &["1", "1", "4", "5"], truth);
        let ok = Verdict {
            correct: true,
            extracted: None,
            reason: VerdictReason::Match,
        };
        let bad = Verdict {
            correct: false,
            extracted: None,
            reason: VerdictReason::Mismatch,
        };
        let buckets =
            bucket_by_correct_count(&[(&g0, &ok), (&g0, &bad), (&g2, &ok)]).unwrap();
        assert_eq!(buckets.len(), 5);
        assert_eq!((buckets[0].correct, buckets[0].wrong), (1, 1));
        assert_eq!((buckets[2].correct, buckets[2].wrong), (1, 0));
        assert_eq!(buckets[2].ratio_tenths, 1000);
        let total: u64 = buckets.iter().map(|b| b.total).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn bucketing_rejects_mixed_k() {
        let g4 = verified_group("p", &["1", "2", "3", "4"], "1");
        let g2 = verified_group("p", &["1", "2"], "1");
        let v = Verdict {
            correct: true,
            extracted: None,
            reason: VerdictReason::Match,
        };
        assert!(matches!(
            bucket_by_correct_count(&[(&g4, &v), (&g2, &v)]),
            Err(MetricsError::MixedGroupSize { expected: 4, found: 2 })
        ));
    }

    #[test]
    fn expected_accuracy_is_total_weighted() {
        // Weighted mean of stated ratios with published totals.
        let buckets = vec![
            ConditionalBucket::from_ratio(4, 260, 1000),
            ConditionalBucket::from_ratio(3, 156, 1000),
            ConditionalBucket::from_ratio(2, 144, 944),
            ConditionalBucket::from_ratio(1, 128, 188),
            ConditionalBucket::from_ratio(0, 272, 0),
        ];
        assert_eq!(expected_accuracy(&buckets).unwrap(), 600);

        let one = vec![bucket(4, 10, 0)];
        assert_eq!(expected_accuracy(&one).unwrap(), 1000);
        assert!(matches!(
            expected_accuracy(&[]),
            Err(MetricsError::EmptyBuckets)
        ));
    }

    fn result_with_usage(thinking: u64, summary: u64) -> GenerationResult {
        GenerationResult {
            text: String::new(),
            usage: TokenUsage {
                prompt_tokens: 0,
                completion_tokens: thinking + summary,
                thinking_tokens: thinking,
                summary_tokens: summary,
            },
            token_logprobs: None,
            finish_reason: FinishReason::Stop,
        }
    }

    #[test]
    fn token_composition_share() {
        let r = result_with_usage(9000, 1000);
        let stats = token_composition(&[&r]);
        assert_eq!(stats.summary_share_tenths, 100); // 10.0%
        assert_eq!(stats.mean_total, 10_000.0);

        let r = result_with_usage(0, 500);
        let stats = token_composition(&[&r]);
        assert_eq!(stats.summary_share_tenths, 1000); // 100%

        // Missing split is skipped and counted.
        let mut broken = result_with_usage(10, 10);
        broken.usage.summary_tokens = 5;
        let ok = result_with_usage(90, 10);
        let stats = token_composition(&[&broken, &ok]);
        assert_eq!(stats.counted, 1);
        assert_eq!(stats.skipped_missing_split, 1);
    }

    fn record(problem: &str, trial: u32, phase: Phase, sample: u32, answer: &str, truth: &str) -> RunRecord {
        let text = format!("x \\boxed{{{answer}}}");
        RunRecord {
            problem_id: problem.to_string(),
            trial,
            phase,
            sample_index: sample,
            request_digest: String::new(),
            result: GenerationResult {
                text: text.clone(),
                usage: TokenUsage {
                    prompt_tokens: 1,
                    completion_tokens: 4,
                    thinking_tokens: 2,
                    summary_tokens: 2,
                },
                token_logprobs: None,
                finish_reason: FinishReason::Stop,
            },
            verdict: Some(verify(&text, truth)),
            unix_ms: 0,
        }
    }

    fn contract(problems: &[(&str, &str)], k: usize, trials: u32) -> RunContract {
        RunContract {
            benchmark: "bench".into(),
            problems: problems
                .iter()
                .map(|(id, truth)| Problem::new(*id, format!("statement {id}"), Some(truth.to_string())))
                .collect(),
            k,
            trials,
            strategies: vec![
                StrategyKind::Pass1,
                StrategyKind::Majority,
                StrategyKind::BonScalar,
                StrategyKind::SelfRefine,
                StrategyKind::PasskOracle,
            ],
        }
    }

    #[test]
    fn aggregate_single_correct_sample() {
        let c = RunContract {
            strategies: vec![StrategyKind::Pass1],
            ..contract(&[("p1", "7")], 1, 1)
        };
        let records = vec![record("p1", 0, Phase::Candidate, 0, "7", "7")];
        let report = aggregate_run(&records, &[c]).unwrap();
        assert_eq!(report.benchmarks[0].pass1_tenths, Some(1000));
    }

    #[test]
    fn aggregate_reports_gaps() {
        let c = contract(&[("p1", "7")], 2, 2);
        // Missing trial 1 entirely and refinement for trial 0.
        let records = vec![
            record("p1", 0, Phase::Candidate, 0, "7", "7"),
            record("p1", 0, Phase::Candidate, 1, "3", "7"),
        ];
        let err = aggregate_run(&records, &[c.clone()]).unwrap_err();
        match err {
            MetricsError::MissingSamples { gaps } => {
                assert!(gaps.contains(&Gap {
                    problem_id: "p1".into(),
                    trial: 1,
                    phase: Phase::Candidate
                }));
                assert!(gaps.contains(&Gap {
                    problem_id: "p1".into(),
                    trial: 0,
                    phase: Phase::Refinement
                }));
            }
            other => panic!("unexpected error {other}"),
        }
        // Lenient path still produces a report over what exists.
        let (report, gaps) = aggregate_available(&records, &[c]).unwrap();
        assert_eq!(gaps.len(), 2);
        assert_eq!(report.benchmarks[0].pass1_tenths, Some(500));
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let c = contract(&[("p1", "7"), ("p2", "9")], 2, 2);
        let mut records = Vec::new();
        for (problem, truth) in [("p1", "7"), ("p2", "9")] {
            for trial in 0..2 {
                for sample in 0..2 {
                    let answer = if (trial + sample) % 2 == 0 { truth } else { "0" };
                    records.push(record(problem, trial, Phase::Candidate, sample, answer, truth));
                }
                records.push(record(problem, trial, Phase::Refinement, 0, truth, truth));
            }
        }
        let base = aggregate_run(&records, std::slice::from_ref(&c)).unwrap();
        let mut shuffled = records.clone();
        shuffled.reverse();
        shuffled.swap(0, 5);
        let again = aggregate_run(&shuffled, &[c]).unwrap();
        assert_eq!(base, again);
    }

    #[tokio::test]
    async fn scaling_curve_oracle_is_monotone_and_k1_collapses() {
        let problems: Vec<Problem> = (0..4)
            .map(|i| Problem::new(format!("p{i}"), format!("statement {i}"), Some("5".into())))
            .collect();
        let counter = ApproxTokenCounter::default();
        let mut pool: BTreeMap<String, Vec<CandidateResponse>> = BTreeMap::new();
        for (pi, problem) in problems.iter().enumerate() {
            let mut samples = Vec::new();
            for s in 0..16u32 {
                let answer = if (s as usize + pi) % 3 == 0 { "5" } else { "1" };
                let text = format!("x \\boxed{{{answer}}}");
                samples.push(
                    CandidateResponse::from_generation(s, text.clone(), TokenUsage::default(), &counter)
                        .with_verdict(verify(&text, "5")),
                );
            }
            pool.insert(problem.id.clone(), samples);
        }
        let kernel = SyntheticKernel::uniform(
            0.5,
            (0..=16).map(|n| (n, 0.5)).collect(),
        );
        let backend = SyntheticBackend::new(kernel, problems.clone(), 3).unwrap();
        let strategies = [
            StrategyKind::Pass1,
            StrategyKind::Majority,
            StrategyKind::BonScalar,
            StrategyKind::PasskOracle,
            StrategyKind::SelfRefine,
        ];
        let decode = DecodeParams::tuned_eval().with_seed(11);
        let curve = input_scaling_curve(
            &problems,
            &pool,
            &strategies,
            &[1, 2, 4, 8, 16],
            &backend,
            &decode,
            1536,
            &counter,
        )
        .await
        .unwrap();

        let oracle = &curve.points[&StrategyKind::PasskOracle];
        for pair in oracle.windows(2) {
            assert!(pair[1].1 >= pair[0].1, "oracle not monotone: {oracle:?}");
        }
        // At k = 1 every selection strategy equals pass@1.
        let at_k1 = |s: StrategyKind| curve.points[&s].iter().find(|(k, _)| *k == 1).unwrap().1;
        let p1 = at_k1(StrategyKind::Pass1);
        assert_eq!(at_k1(StrategyKind::Majority), p1);
        assert_eq!(at_k1(StrategyKind::BonScalar), p1);
        assert_eq!(at_k1(StrategyKind::PasskOracle), p1);
    }

    #[tokio::test]
    async fn scaling_curve_rejects_insufficient_pools() {
        let problems = vec![Problem::new("p0", "s", Some("1".into()))];
        let pool: BTreeMap<String, Vec<CandidateResponse>> = BTreeMap::from([("p0".to_string(), vec![])]);
        let backend = SyntheticBackend::new(SyntheticKernel::uniform(0.5, BTreeMap::new()), problems.clone(), 1)
            .unwrap();
        let err = input_scaling_curve(
            &problems,
            &pool,
            &[StrategyKind::Pass1],
            &[4],
            &backend,
            &DecodeParams::tuned_eval(),
            1536,
            &ApproxTokenCounter::default(),
        )
        .await
        .unwrap_err();
        assert!(matches!(err, MetricsError::InsufficientSamples { .. }));
    }
}
