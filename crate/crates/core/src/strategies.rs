//! Aggregation strategies over a candidate group: majority voting,
//! Best-of-N (scalar scoring and knockout tournaments), oracle pass@k,
//! one-shot self-refinement, and hierarchical group-and-combine.
//!
//! Selection strategies can never beat the best candidate in the group;
//! self-refinement can, because it generates a fresh solution conditioned on
//! all of them. Tie-breaking everywhere is "earliest sample index" so runs
//! are reproducible and tests exact.

use serde::{Deserialize, Serialize};

use crate::answer::{normalize_answer, verify, NormalizedAnswer, Verdict};
use crate::backend::{Backend, BackendError, DecodeParams, GenerationRequest, GenerationResult};
use crate::prompt::{
    build_refinement_prompt, AugmentedPrompt, CandidateGroup, CandidateResponse, Problem,
    PromptError,
};
use crate::tokens::TokenCounter;
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Pass1,
    PasskOracle,
    Majority,
    BonScalar,
    BonKnockout,
    SelfRefine,
    Hierarchical,
}

/// Extra inference spent by a strategy beyond the candidate samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Cost {
    pub extra_requests: u64,
    pub extra_tokens: u64,
}

/// What a strategy chose and whether it was right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: StrategyKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chosen_answer: Option<NormalizedAnswer>,
    pub correct: bool,
    pub n_correct_candidates: u32,
    pub cost: Cost,
}

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("problem has no ground truth for oracle scoring")]
    MissingGroundTruth,
    #[error("scorer failure: {0}")]
    Failed(String),
}

/// Assigns a scalar quality score to one candidate summary.
pub trait ScalarScorer: Send + Sync {
    fn score(&self, problem: &Problem, candidate_summary: &str) -> Result<f64, ScorerError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preference {
    PreferA,
    PreferB,
}

/// Comparative judge over two candidate summaries. Deterministic judges
/// with strict underlying scores are antisymmetric under argument swap.
pub trait PairwiseJudge: Send + Sync {
    fn judge(&self, problem: &Problem, summary_a: &str, summary_b: &str)
        -> Result<Preference, ScorerError>;
}

/// Ground-truth scorer: 1 for a correct boxed answer, 0 otherwise. As a
/// judge it prefers the correct side and falls back to the first argument
/// on ties.
pub struct OracleScorer;

impl ScalarScorer for OracleScorer {
    fn score(&self, problem: &Problem, candidate_summary: &str) -> Result<f64, ScorerError> {
        let truth = problem
            .ground_truth
            .as_deref()
            .ok_or(ScorerError::MissingGroundTruth)?;
        Ok(if verify(candidate_summary, truth).correct { 1.0 } else { 0.0 })
    }
}

impl PairwiseJudge for OracleScorer {
    fn judge(
        &self,
        problem: &Problem,
        summary_a: &str,
        summary_b: &str,
    ) -> Result<Preference, ScorerError> {
        let a = self.score(problem, summary_a)?;
        let b = self.score(problem, summary_b)?;
        Ok(if b > a { Preference::PreferB } else { Preference::PreferA })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StrategyError {
    #[error("candidate group is empty")]
    EmptyGroup,
    #[error("group size must be >= 1")]
    InvalidGroupSize,
    #[error("candidate {index} has no verdict; verify candidates first")]
    MissingVerdict { index: usize },
    #[error("problem has no ground truth")]
    MissingGroundTruth,
    #[error("scorer failed on candidate {index}: {source}")]
    ScorerFailed {
        index: usize,
        #[source]
        source: ScorerError,
    },
    #[error("judge failed on pair ({a}, {b}): {source}")]
    JudgeFailed {
        a: usize,
        b: usize,
        #[source]
        source: ScorerError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Splits verified samples into consecutive non-overlapping groups of `k`
/// in sample-index order. A trailing remainder is dropped with a warning.
pub fn group_nonoverlapping(
    problem_id: &str,
    mut samples: Vec<CandidateResponse>,
    k: usize,
) -> Result<Vec<CandidateGroup>, StrategyError> {
    if k == 0 {
        return Err(StrategyError::InvalidGroupSize);
    }
    samples.sort_by_key(|c| c.sample_index);
    let remainder = samples.len() % k;
    if remainder != 0 {
        tracing::warn!(
            problem_id,
            remainder,
            k,
            "sample count is not a multiple of k; dropping trailing remainder"
        );
        samples.truncate(samples.len() - remainder);
    }
    samples
        .chunks(k)
        .map(|chunk| CandidateGroup::new(problem_id, chunk.to_vec()).map_err(StrategyError::from))
        .collect()
}

fn require_verdicts(group: &CandidateGroup) -> Result<u32, StrategyError> {
    for (index, c) in group.candidates.iter().enumerate() {
        if c.verdict.is_none() {
            return Err(StrategyError::MissingVerdict { index });
        }
    }
    Ok(group.n_correct().expect("checked above"))
}

fn candidate_outcome(
    strategy: StrategyKind,
    group: &CandidateGroup,
    chosen: usize,
    n_correct: u32,
) -> StrategyOutcome {
    let verdict = group.candidates[chosen].verdict.as_ref().expect("verified");
    StrategyOutcome {
        strategy,
        chosen_answer: verdict.extracted.as_ref().map(normalize_answer),
        correct: verdict.correct,
        n_correct_candidates: n_correct,
        cost: Cost::default(),
    }
}

/// Majority voting: the most frequent answer-equivalence class wins, ties
/// broken by the earliest sample index among tied classes. Candidates with
/// no extractable answer form a class that can never win against any
/// extracted answer.
pub fn majority_vote(group: &CandidateGroup) -> Result<StrategyOutcome, StrategyError> {
    if group.candidates.is_empty() {
        return Err(StrategyError::EmptyGroup);
    }
    let n_correct = require_verdicts(group)?;

    struct Class {
        key: String,
        count: usize,
        answer: Option<NormalizedAnswer>,
        any_correct: bool,
    }
    let mut classes: Vec<Class> = Vec::new();
    for c in &group.candidates {
        let verdict = c.verdict.as_ref().expect("verified");
        let (key, answer) = match &verdict.extracted {
            Some(raw) => {
                let normalized = normalize_answer(raw);
                (normalized.class_key(), Some(normalized))
            }
            None => ("no-answer".to_string(), None),
        };
        match classes.iter_mut().find(|cl| cl.key == key) {
            Some(cl) => {
                cl.count += 1;
                cl.any_correct |= verdict.correct;
            }
            None => classes.push(Class {
                key,
                count: 1,
                answer,
                any_correct: verdict.correct,
            }),
        }
    }
    // Classes were created in first-appearance order, i.e. by earliest
    // sample index; a stable max keeps that tie-break.
    let winner = classes
        .iter()
        .filter(|cl| cl.answer.is_some())
        .fold(None::<&Class>, |best, cl| match best {
            Some(b) if b.count >= cl.count => Some(b),
            _ => Some(cl),
        });
    Ok(match winner {
        Some(cl) => StrategyOutcome {
            strategy: StrategyKind::Majority,
            chosen_answer: cl.answer.clone(),
            correct: cl.any_correct,
            n_correct_candidates: n_correct,
            cost: Cost::default(),
        },
        // Every candidate failed extraction; nothing can win.
        None => StrategyOutcome {
            strategy: StrategyKind::Majority,
            chosen_answer: None,
            correct: false,
            n_correct_candidates: n_correct,
            cost: Cost::default(),
        },
    })
}

/// Best-of-N with a scalar scorer: argmax of score, ties to the earliest
/// sample index.
pub fn best_of_n_scalar(
    problem: &Problem,
    group: &CandidateGroup,
    scorer: &dyn ScalarScorer,
) -> Result<StrategyOutcome, StrategyError> {
    if group.candidates.is_empty() {
        return Err(StrategyError::EmptyGroup);
    }
    let n_correct = require_verdicts(group)?;
    let mut best: Option<(usize, f64)> = None;
    for (index, c) in group.candidates.iter().enumerate() {
        let score = scorer
            .score(problem, &c.summary)
            .map_err(|source| StrategyError::ScorerFailed { index, source })?;
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((index, score));
        }
    }
    let (chosen, _) = best.expect("non-empty group");
    Ok(candidate_outcome(StrategyKind::BonScalar, group, chosen, n_correct))
}

/// Best-of-N via a single-elimination knockout, seeded in sample order:
/// (1 vs 2), (3 vs 4), winners meet. With an odd field the unpaired last
/// participant receives a bye in the earliest round.
pub fn best_of_n_knockout(
    problem: &Problem,
    group: &CandidateGroup,
    judge: &dyn PairwiseJudge,
) -> Result<StrategyOutcome, StrategyError> {
    if group.candidates.is_empty() {
        return Err(StrategyError::EmptyGroup);
    }
    let n_correct = require_verdicts(group)?;
    let mut alive: Vec<usize> = (0..group.candidates.len()).collect();
    while alive.len() > 1 {
        let mut next = Vec::with_capacity(alive.len() / 2 + 1);
        for pair in alive.chunks(2) {
            if let [a, b] = *pair {
                let preference = judge
                    .judge(problem, &group.candidates[a].summary, &group.candidates[b].summary)
                    .map_err(|source| StrategyError::JudgeFailed { a, b, source })?;
                next.push(match preference {
                    Preference::PreferA => a,
                    Preference::PreferB => b,
                });
            } else {
                next.push(pair[0]);
            }
        }
        alive = next;
    }
    Ok(candidate_outcome(StrategyKind::BonKnockout, group, alive[0], n_correct))
}

/// Oracle pass@k: the group counts as correct if any candidate is correct.
/// The ceiling for every selection-based strategy.
pub fn pass_at_k_oracle(group: &CandidateGroup) -> Result<StrategyOutcome, StrategyError> {
    if group.candidates.is_empty() {
        return Err(StrategyError::EmptyGroup);
    }
    let n_correct = require_verdicts(group)?;
    let first_correct = group
        .candidates
        .iter()
        .find(|c| c.verdict.as_ref().is_some_and(|v| v.correct));
    Ok(StrategyOutcome {
        strategy: StrategyKind::PasskOracle,
        chosen_answer: first_correct
            .and_then(|c| c.verdict.as_ref())
            .and_then(|v| v.extracted.as_ref())
            .map(normalize_answer),
        correct: n_correct > 0,
        n_correct_candidates: n_correct,
        cost: Cost::default(),
    })
}

/// Everything produced by one self-refinement call; the harness logs the
/// generation alongside the outcome.
#[derive(Debug, Clone)]
pub struct SelfRefineOutput {
    pub outcome: StrategyOutcome,
    pub prompt: AugmentedPrompt,
    pub result: GenerationResult,
    pub verdict: Verdict,
}

/// One-shot self-refinement: builds the augmented prompt, issues a single
/// generation, and verifies the refined output against the ground truth.
/// An output with no boxed answer is an incorrect outcome, not an error.
pub async fn self_refine(
    problem: &Problem,
    group: &CandidateGroup,
    backend: &dyn Backend,
    decode: &DecodeParams,
    per_candidate_budget: usize,
    counter: &dyn TokenCounter,
) -> Result<SelfRefineOutput, StrategyError> {
    let truth = problem
        .ground_truth
        .as_deref()
        .ok_or(StrategyError::MissingGroundTruth)?;
    let n_correct = require_verdicts(group)?;
    let prompt = build_refinement_prompt(problem, group, per_candidate_budget, counter)?;
    let request = GenerationRequest::new(prompt.text.clone(), decode, "refine");
    let result = backend.generate(&request).await?;
    let verdict = verify(&result.text, truth);
    let outcome = StrategyOutcome {
        strategy: StrategyKind::SelfRefine,
        chosen_answer: verdict.extracted.as_ref().map(normalize_answer),
        correct: verdict.correct,
        n_correct_candidates: n_correct,
        cost: Cost {
            extra_requests: 1,
            extra_tokens: result.usage.prompt_tokens + result.usage.completion_tokens,
        },
    };
    Ok(SelfRefineOutput {
        outcome,
        prompt,
        result,
        verdict,
    })
}

/// Hierarchical refinement for candidate pools larger than one prompt can
/// hold: partition into fixed-size chunks, self-refine each chunk, treat the
/// refined outputs as a new candidate list, and recurse until one output
/// remains. Costs the number of chunks summed over all levels.
pub async fn hierarchical_refine(
    problem: &Problem,
    candidates: Vec<CandidateResponse>,
    group_size: usize,
    backend: &dyn Backend,
    decode: &DecodeParams,
    per_candidate_budget: usize,
    counter: &dyn TokenCounter,
) -> Result<StrategyOutcome, StrategyError> {
    if candidates.is_empty() {
        return Err(StrategyError::EmptyGroup);
    }
    if group_size == 0 {
        return Err(StrategyError::InvalidGroupSize);
    }
    let truth = problem
        .ground_truth
        .as_deref()
        .ok_or(StrategyError::MissingGroundTruth)?;
    let original_n_correct = {
        let group = CandidateGroup::new(&problem.id, candidates.clone())?;
        require_verdicts(&group)?
    };

    let mut level = candidates;
    let mut total = Cost::default();
    let mut depth = 0u32;
    loop {
        let mut next: Vec<CandidateResponse> = Vec::new();
        let mut last: Option<SelfRefineOutput> = None;
        for (chunk_index, chunk) in level.chunks(group_size).enumerate() {
            let group = CandidateGroup::new(&problem.id, chunk.to_vec())?;
            let mut chunk_decode = decode.clone();
            if let Some(seed) = decode.seed {
                chunk_decode.seed = Some(derive_seed(
                    seed,
                    &["hierarchical", &depth.to_string(), &chunk_index.to_string()],
                ));
            }
            let output =
                self_refine(problem, &group, backend, &chunk_decode, per_candidate_budget, counter)
                    .await?;
            total.extra_requests += output.outcome.cost.extra_requests;
            total.extra_tokens += output.outcome.cost.extra_tokens;
            let refined = CandidateResponse::from_generation(
                chunk_index as u32,
                output.result.text.clone(),
                output.result.usage,
                counter,
            )
            .with_verdict(verify(&output.result.text, truth));
            next.push(refined);
            last = Some(output);
        }
        let last = last.expect("at least one chunk");
        if next.len() == 1 {
            return Ok(StrategyOutcome {
                strategy: StrategyKind::Hierarchical,
                chosen_answer: last.outcome.chosen_answer,
                correct: last.outcome.correct,
                n_correct_candidates: original_n_correct,
                cost: total,
            });
        }
        level = next;
        depth += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, SyntheticKernel, TokenUsage};
    use crate::tokens::ApproxTokenCounter;
    use std::collections::BTreeMap;

    fn counter() -> ApproxTokenCounter {
        ApproxTokenCounter::default()
    }

    fn verified(i: u32, answer: Option<&str>, truth: &str) -> CandidateResponse {
        let text = match answer {
            Some(a) => format!("so the answer is \\boxed{{{a}}}"),
            None => "never finished reasoning".to_string(),
        };
        CandidateResponse::from_generation(i, text.clone(), TokenUsage::default(), &counter())
            .with_verdict(verify(&text, truth))
    }

    fn group_of(answers: &[Option<&str>], truth: &str) -> CandidateGroup {
        let candidates = answers
            .iter()
            .enumerate()
            .map(|(i, a)| verified(i as u32, *a, truth))
            .collect();
        CandidateGroup::new("p1", candidates).unwrap()
    }

    fn problem() -> Problem {
        Problem::new("p1", "What is the answer?", Some("468".into()))
    }

    #[test]
    fn grouping_chunks_in_sample_order() {
        let truth = "1";
        let samples: Vec<CandidateResponse> =
            (0..32).map(|i| verified(i, Some("1"), truth)).collect();
        let groups = group_nonoverlapping("p1", samples, 4).unwrap();
        assert_eq!(groups.len(), 8);
        assert_eq!(groups[0].candidates[0].sample_index, 0);
        assert_eq!(groups[7].candidates[3].sample_index, 31);

        let samples: Vec<CandidateResponse> =
            (0..4).map(|i| verified(i, Some("1"), truth)).collect();
        assert_eq!(group_nonoverlapping("p1", samples, 4).unwrap().len(), 1);

        // Remainder dropped.
        let samples: Vec<CandidateResponse> =
            (0..10).map(|i| verified(i, Some("1"), truth)).collect();
        assert_eq!(group_nonoverlapping("p1", samples, 4).unwrap().len(), 2);

        assert!(matches!(
            group_nonoverlapping("p1", vec![], 0),
            Err(StrategyError::InvalidGroupSize)
        ));
    }

    #[test]
    fn majority_picks_most_frequent_class() {
        let g = group_of(&[Some("468"), Some("468"), Some("312"), Some("26")], "468");
        let outcome = majority_vote(&g).unwrap();
        assert!(outcome.correct);
        assert_eq!(outcome.chosen_answer.unwrap().canonical, "468");
        assert_eq!(outcome.n_correct_candidates, 2);
    }

    #[test]
    fn majority_all_identical() {
        let g = group_of(&[Some("7"), Some("7"), Some("7"), Some("7")], "7");
        assert!(majority_vote(&g).unwrap().correct);
    }

    #[test]
    fn majority_tie_breaks_to_earliest_sample_index() {
        let g = group_of(&[Some("9"), Some("9"), Some("468"), Some("468")], "468");
        let outcome = majority_vote(&g).unwrap();
        assert_eq!(outcome.chosen_answer.unwrap().canonical, "9");
        assert!(!outcome.correct);
    }

    #[test]
    fn majority_no_answer_class_never_wins() {
        let g = group_of(&[None, None, None, Some("7")], "7");
        let outcome = majority_vote(&g).unwrap();
        assert_eq!(outcome.chosen_answer.unwrap().canonical, "7");
        assert!(outcome.correct);

        let g = group_of(&[None, None], "7");
        let outcome = majority_vote(&g).unwrap();
        assert!(outcome.chosen_answer.is_none());
        assert!(!outcome.correct);
    }

    #[test]
    fn majority_counts_equivalent_forms_as_one_class() {
        let g = group_of(&[Some("0.5"), Some("\\frac{1}{2}"), Some("3"), Some("3")], "1/2");
        // 0.5 and 1/2 are one class of size 2, tied with the 3s; the
        // earlier first-appearance wins.
        let outcome = majority_vote(&g).unwrap();
        assert!(outcome.correct);
    }

    #[test]
    fn majority_winning_class_is_permutation_invariant() {
        let make = |answers: &[Option<&str>]| {
            let outcome = majority_vote(&group_of(answers, "468")).unwrap();
            outcome.chosen_answer.map(|a| a.canonical)
        };
        // Unique majority: any order gives the same class.
        let base = [Some("468"), Some("468"), Some("468"), Some("312")];
        let rotated = [Some("312"), Some("468"), Some("468"), Some("468")];
        assert_eq!(make(&base), make(&rotated));
        // Tie: the winner depends on order, by design.
        let ab = [Some("1"), Some("1"), Some("2"), Some("2")];
        let ba = [Some("2"), Some("2"), Some("1"), Some("1")];
        assert_eq!(make(&ab).unwrap(), "1");
        assert_eq!(make(&ba).unwrap(), "2");
    }

    #[test]
    fn majority_agrees_with_brute_force_counter() {
        // All answer sequences of length <= 4 over a 3-answer alphabet.
        let alphabet = ["11", "22", "33"];
        let truth = "11";
        for len in 1..=4usize {
            let mut indices = vec![0usize; len];
            loop {
                let answers: Vec<Option<&str>> = indices.iter().map(|&i| Some(alphabet[i])).collect();
                let outcome = majority_vote(&group_of(&answers, truth)).unwrap();

                // Brute force: count per symbol, max count, earliest first
                // occurrence on ties.
                let mut best: Option<(usize, usize)> = None; // (count, first_pos)
                let mut winner = None;
                for symbol in alphabet {
                    let count = indices.iter().filter(|&&i| alphabet[i] == symbol).count();
                    if count == 0 {
                        continue;
                    }
                    let first = indices.iter().position(|&i| alphabet[i] == symbol).unwrap();
                    if best.map_or(true, |(bc, bf)| count > bc || (count == bc && first < bf)) {
                        best = Some((count, first));
                        winner = Some(symbol);
                    }
                }
                assert_eq!(
                    outcome.chosen_answer.unwrap().canonical,
                    winner.unwrap(),
                    "sequence {indices:?}"
                );

                // Advance odometer.
                let mut pos = 0;
                loop {
                    if pos == len {
                        break;
                    }
                    indices[pos] += 1;
                    if indices[pos] < alphabet.len() {
                        break;
                    }
                    indices[pos] = 0;
                    pos += 1;
                }
                if pos == len {
                    break;
                }
            }
        }
    }

    struct FixedScores(Vec<f64>);
    impl ScalarScorer for FixedScores {
        fn score(&self, _p: &Problem, summary: &str) -> Result<f64, ScorerError> {
            // Summaries are "so the answer is \boxed{sN}"; recover N.
            let idx = summary
                .chars()
                .filter(|c| c.is_ascii_digit())
                .collect::<String>()
                .parse::<usize>()
                .map_err(|e| ScorerError::Failed(e.to_string()))?;
            Ok(self.0[idx])
        }
    }

    fn indexed_group(n: usize, truth: &str) -> CandidateGroup {
        let answers: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let refs: Vec<Option<&str>> = answers.iter().map(|a| Some(a.as_str())).collect();
        group_of(&refs, truth)
    }

    #[test]
    fn bon_scalar_takes_argmax_with_earliest_tie() {
        let p = problem();
        let g = indexed_group(4, "1");
        let outcome = best_of_n_scalar(&p, &g, &FixedScores(vec![0.1, 0.9, 0.3, 0.2])).unwrap();
        assert_eq!(outcome.chosen_answer.unwrap().canonical, "1");
        assert!(outcome.correct);

        let outcome = best_of_n_scalar(&p, &g, &FixedScores(vec![0.5, 0.5, 0.5, 0.5])).unwrap();
        assert_eq!(outcome.chosen_answer.unwrap().canonical, "0");
    }

    #[test]
    fn bon_scalar_with_oracle_equals_passk_when_any_correct() {
        let p = problem();
        for correct_pos in 0..4 {
            let answers: Vec<Option<String>> = (0..4)
                .map(|i| Some(if i == correct_pos { "468".to_string() } else { format!("{i}") }))
                .collect();
            let refs: Vec<Option<&str>> = answers.iter().map(|a| a.as_deref()).collect();
            let g = group_of(&refs, "468");
            let bon = best_of_n_scalar(&p, &g, &OracleScorer).unwrap();
            let oracle = pass_at_k_oracle(&g).unwrap();
            assert_eq!(bon.correct, oracle.correct);
            assert!(bon.correct);
        }
    }

    #[test]
    fn bon_scalar_argmax_invariant_under_increasing_transforms() {
        let p = problem();
        let g = indexed_group(4, "1");
        let base = vec![0.12, 0.7, 0.69, 0.2];
        let chosen = |scores: Vec<f64>| {
            best_of_n_scalar(&p, &g, &FixedScores(scores))
                .unwrap()
                .chosen_answer
                .unwrap()
                .canonical
        };
        let reference = chosen(base.clone());
        let affine: Vec<f64> = base.iter().map(|s| 3.0 * s + 11.0).collect();
        let exp: Vec<f64> = base.iter().map(|s| s.exp()).collect();
        assert_eq!(chosen(affine), reference);
        assert_eq!(chosen(exp), reference);
    }

    struct AlwaysA;
    impl PairwiseJudge for AlwaysA {
        fn judge(&self, _p: &Problem, _a: &str, _b: &str) -> Result<Preference, ScorerError> {
            Ok(Preference::PreferA)
        }
    }

    #[test]
    fn knockout_prefers_first_under_constant_judge() {
        let p = problem();
        let g = indexed_group(4, "0");
        let outcome = best_of_n_knockout(&p, &g, &AlwaysA).unwrap();
        assert_eq!(outcome.chosen_answer.unwrap().canonical, "0");
    }

    #[test]
    fn knockout_single_candidate_is_a_bye() {
        let p = problem();
        let g = indexed_group(1, "0");
        let outcome = best_of_n_knockout(&p, &g, &AlwaysA).unwrap();
        assert_eq!(outcome.chosen_answer.unwrap().canonical, "0");
    }

    #[test]
    fn knockout_truthful_judge_finds_lone_correct_in_any_position() {
        let p = problem();
        for correct_pos in 0..4 {
            let answers: Vec<Option<String>> = (0..4)
                .map(|i| Some(if i == correct_pos { "468".to_string() } else { format!("{i}") }))
                .collect();
            let refs: Vec<Option<&str>> = answers.iter().map(|a| a.as_deref()).collect();
            let g = group_of(&refs, "468");
            let outcome = best_of_n_knockout(&p, &g, &OracleScorer).unwrap();
            assert!(outcome.correct, "position {correct_pos}");
        }
    }

    #[test]
    fn knockout_odd_field_gives_bye_in_earliest_round() {
        let p = problem();
        // 5 candidates, only the last is correct. It must survive its byes
        // and win the final against the truthful judge.
        let answers = [Some("0"), Some("1"), Some("2"), Some("3"), Some("468")];
        let g = group_of(&answers, "468");
        let outcome = best_of_n_knockout(&p, &g, &OracleScorer).unwrap();
        assert!(outcome.correct);
    }

    #[test]
    fn oracle_passk_examples() {
        let g = group_of(&[Some("1"), Some("468"), Some("2"), Some("3")], "468");
        assert!(pass_at_k_oracle(&g).unwrap().correct);
        let g = group_of(&[Some("1"), Some("2"), Some("3"), Some("4")], "468");
        assert!(!pass_at_k_oracle(&g).unwrap().correct);
    }

    #[test]
    fn missing_verdicts_are_reported_with_index() {
        let mut g = group_of(&[Some("1"), Some("2")], "1");
        g.candidates[1].verdict = None;
        assert!(matches!(
            majority_vote(&g),
            Err(StrategyError::MissingVerdict { index: 1 })
        ));
    }

    #[tokio::test]
    async fn self_refine_verifies_single_generation() {
        let p = problem();
        // All candidates wrong; the scripted "model" still produces the
        // correct final answer.
        let g = group_of(&[Some("384"), Some("26\\sqrt{39}"), Some("312"), Some("26")], "468");
        let backend = ScriptedBackend::from_texts(["<think>diagnose the flaws</think>\nFinal Answer:\\[\\boxed{468}\\]"]);
        let output = self_refine(&p, &g, &backend, &DecodeParams::tuned_eval(), 1536, &counter())
            .await
            .unwrap();
        assert!(output.outcome.correct);
        assert_eq!(output.outcome.n_correct_candidates, 0);
        assert_eq!(output.outcome.cost.extra_requests, 1);
        assert!(output.outcome.cost.extra_tokens > 0);
    }

    #[tokio::test]
    async fn self_refine_unverifiable_output_is_incorrect_not_error() {
        let p = problem();
        let g = group_of(&[Some("1"), Some("2"), Some("3"), Some("4")], "468");
        let backend = ScriptedBackend::from_texts(["I cannot decide on an answer."]);
        let output = self_refine(&p, &g, &backend, &DecodeParams::tuned_eval(), 1536, &counter())
            .await
            .unwrap();
        assert!(!output.outcome.correct);
        assert!(output.outcome.chosen_answer.is_none());
        assert_eq!(
            output.verdict.reason,
            crate::answer::VerdictReason::NoBoxedAnswer
        );
    }

    #[tokio::test]
    async fn self_refine_surfaces_backend_errors() {
        let p = problem();
        let g = group_of(&[Some("1")], "468");
        let backend = ScriptedBackend::from_texts(Vec::<String>::new());
        let err = self_refine(&p, &g, &backend, &DecodeParams::tuned_eval(), 1536, &counter())
            .await
            .unwrap_err();
        assert!(matches!(err, StrategyError::Backend(_)));
    }

    #[tokio::test]
    async fn self_refine_on_synthetic_recover_one_is_correct() {
        let p = problem();
        let g = group_of(&[Some("1"), Some("2"), Some("3"), Some("4")], "468");
        let kernel = SyntheticKernel::uniform(
            0.0,
            BTreeMap::from([(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0), (4, 1.0)]),
        );
        let backend =
            crate::backend::SyntheticBackend::new(kernel, vec![p.clone()], 5).unwrap();
        let output = self_refine(&p, &g, &backend, &DecodeParams::tuned_eval(), 1536, &counter())
            .await
            .unwrap();
        assert!(output.outcome.correct, "recover[0] = 1.0 must recover");
    }

    #[tokio::test]
    async fn hierarchical_counts_refinement_calls() {
        let p = problem();
        let counter = counter();

        // 16 candidates, group size 4: 4 chunk calls + 1 combine call.
        let candidates: Vec<CandidateResponse> =
            (0..16).map(|i| verified(i, Some(&i.to_string()), "468")).collect();
        let responses: Vec<String> =
            (0..5).map(|_| "thus \\boxed{468}".to_string()).collect();
        let backend = ScriptedBackend::from_texts(responses);
        let outcome = hierarchical_refine(
            &p,
            candidates,
            4,
            &backend,
            &DecodeParams::tuned_eval(),
            1536,
            &counter,
        )
        .await
        .unwrap();
        assert_eq!(outcome.cost.extra_requests, 5);
        assert_eq!(backend.served(), 5);
        assert!(outcome.correct);

        // 4 candidates, group size 4: identical to one self-refinement.
        let candidates: Vec<CandidateResponse> =
            (0..4).map(|i| verified(i, Some(&i.to_string()), "468")).collect();
        let backend = ScriptedBackend::from_texts(["thus \\boxed{468}"]);
        let outcome = hierarchical_refine(
            &p,
            candidates,
            4,
            &backend,
            &DecodeParams::tuned_eval(),
            1536,
            &counter,
        )
        .await
        .unwrap();
        assert_eq!(outcome.cost.extra_requests, 1);
        assert!(outcome.correct);

        // 2 candidates, group size 4: one call on the pair.
        let candidates: Vec<CandidateResponse> =
            (0..2).map(|i| verified(i, Some(&i.to_string()), "468")).collect();
        let backend = ScriptedBackend::from_texts(["thus \\boxed{1}"]);
        let outcome = hierarchical_refine(
            &p,
            candidates,
            4,
            &backend,
            &DecodeParams::tuned_eval(),
            1536,
            &counter,
        )
        .await
        .unwrap();
        assert_eq!(outcome.cost.extra_requests, 1);
        assert!(!outcome.correct);
    }

    #[test]
    fn selection_strategies_never_beat_the_oracle() {
        // Structural ceiling: if the selection strategy is right, some
        // candidate was right, so the oracle is right too.
        let truths_and_answers: Vec<Vec<Option<&str>>> = vec![
            vec![Some("468"), Some("1"), Some("2"), Some("3")],
            vec![Some("1"), Some("1"), Some("2"), Some("468")],
            vec![Some("1"), Some("2"), Some("3"), Some("4")],
            vec![None, Some("468"), None, Some("468")],
            vec![None, None, None, None],
        ];
        let p = problem();
        for answers in truths_and_answers {
            let g = group_of(&answers, "468");
            let oracle = pass_at_k_oracle(&g).unwrap().correct;
            assert!(!majority_vote(&g).unwrap().correct || oracle);
            assert!(!best_of_n_scalar(&p, &g, &OracleScorer).unwrap().correct || oracle);
            assert!(!best_of_n_knockout(&p, &g, &OracleScorer).unwrap().correct || oracle);
        }
    }
}
