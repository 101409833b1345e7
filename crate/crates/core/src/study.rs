//! Seeded Monte-Carlo studies on the synthetic backend: per-group strategy
//! outcomes, conditional buckets, and ceiling checks, with no network or
//! async machinery involved. Used by the `simulate` subcommand and the
//! acceptance suite.

use serde::{Deserialize, Serialize};

use crate::answer::verify;
use crate::backend::{synthetic_refine, synthetic_sample, BackendError, SyntheticKernel};
use crate::metrics::{bucket_by_correct_count, ratio_tenths, ConditionalBucket, MetricsError};
use crate::prompt::{CandidateGroup, CandidateResponse, Problem};
use crate::strategies::{
    best_of_n_scalar, majority_vote, pass_at_k_oracle, OracleScorer, StrategyError,
};
use crate::tokens::ApproxTokenCounter;
use crate::util::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("study needs at least one problem")]
    NoProblems,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub groups: u64,
    pub samples: u64,
    pub pass1_tenths: i64,
    pub majority_tenths: i64,
    pub bon_tenths: i64,
    pub oracle_tenths: i64,
    pub self_refine_tenths: i64,
    pub buckets: Vec<ConditionalBucket>,
    /// Groups where majority voting or Best-of-N was correct although no
    /// candidate was (must stay zero).
    pub ceiling_violations: u64,
    pub zero_correct_groups: u64,
    pub zero_correct_recoveries: u64,
}

/// Runs `groups_per_problem` independent k-candidate groups per problem,
/// evaluating majority voting, oracle-scored Best-of-N, oracle pass@k and
/// synthetic self-refinement on each. Deterministic in the seed.
pub fn run_conditional_study(
    kernel: &SyntheticKernel,
    problems: &[Problem],
    groups_per_problem: u32,
    k: usize,
    seed: u64,
) -> Result<StudySummary, StudyError> {
    if problems.is_empty() {
        return Err(StudyError::NoProblems);
    }
    let counter = ApproxTokenCounter::default();
    let mut sample_correct = 0u64;
    let mut majority_correct = 0u64;
    let mut bon_correct = 0u64;
    let mut oracle_correct = 0u64;
    let mut refine_correct = 0u64;
    let mut ceiling_violations = 0u64;
    let mut zero_correct_groups = 0u64;
    let mut zero_correct_recoveries = 0u64;
    let mut groups_and_verdicts = Vec::new();

    for problem in problems {
        let truth = problem
            .ground_truth
            .as_deref()
            .ok_or_else(|| BackendError::MissingGroundTruth(problem.id.clone()))?;
        for g in 0..groups_per_problem {
            let candidates: Vec<CandidateResponse> = (0..k as u32)
                .map(|s| {
                    let cell_seed = derive_seed(
                        seed,
                        &["study-candidate", &problem.id, &g.to_string(), &s.to_string()],
                    );
                    synthetic_sample(problem, kernel, cell_seed).map(|result| {
                        CandidateResponse::from_generation(s, result.text.clone(), result.usage, &counter)
                            .with_verdict(verify(&result.text, truth))
                    })
                })
                .collect::<Result<_, BackendError>>()?;
            let group = CandidateGroup::new(&problem.id, candidates)
                .map_err(StrategyError::from)?;
            let n_correct = group.n_correct().expect("candidates verified");
            sample_correct += u64::from(n_correct);

            let majority = majority_vote(&group)?.correct;
            let bon = best_of_n_scalar(problem, &group, &OracleScorer)?.correct;
            let oracle = pass_at_k_oracle(&group)?.correct;
            if (majority || bon) && !oracle {
                ceiling_violations += 1;
            }
            majority_correct += u64::from(majority);
            bon_correct += u64::from(bon);
            oracle_correct += u64::from(oracle);

            let refine_seed =
                derive_seed(seed, &["study-refine", &problem.id, &g.to_string()]);
            let refined = synthetic_refine(problem, &group, kernel, refine_seed)?;
            let verdict = verify(&refined.text, truth);
            refine_correct += u64::from(verdict.correct);
            if n_correct == 0 {
                zero_correct_groups += 1;
                zero_correct_recoveries += u64::from(verdict.correct);
            }
            groups_and_verdicts.push((group, verdict));
        }
    }

    let groups = groups_and_verdicts.len() as u64;
    let samples = groups * k as u64;
    let pairs: Vec<(&CandidateGroup, &crate::answer::Verdict)> =
        groups_and_verdicts.iter().map(|(g, v)| (g, v)).collect();
    let buckets = bucket_by_correct_count(&pairs)?;
    Ok(StudySummary {
        groups,
        samples,
        pass1_tenths: ratio_tenths(sample_correct, samples),
        majority_tenths: ratio_tenths(majority_correct, groups),
        bon_tenths: ratio_tenths(bon_correct, groups),
        oracle_tenths: ratio_tenths(oracle_correct, groups),
        self_refine_tenths: ratio_tenths(refine_correct, groups),
        buckets,
        ceiling_violations,
        zero_correct_groups,
        zero_correct_recoveries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn degenerate_kernels_pin_the_extremes() {
        let problems: Vec<Problem> = (0..3)
            .map(|i| Problem::new(format!("p{i}"), format!("statement {i}"), Some("5".into())))
            .collect();
        let kernel = SyntheticKernel::uniform(
            1.0,
            BTreeMap::from([(0, 0.0), (1, 0.0), (2, 0.0), (3, 0.0), (4, 1.0)]),
        );
        let summary = run_conditional_study(&kernel, &problems, 8, 4, 3).unwrap();
        assert_eq!(summary.pass1_tenths, 1000);
        assert_eq!(summary.self_refine_tenths, 1000);
        assert_eq!(summary.oracle_tenths, 1000);
        assert_eq!(summary.ceiling_violations, 0);
        assert_eq!(summary.zero_correct_groups, 0);
    }

    #[test]
    fn refinement_can_escape_the_selection_ceiling() {
        // No candidate is ever correct, yet refinement recovers every
        // group: the escape the selection strategies cannot make.
        let problems = vec![Problem::new("p0", "statement", Some("5".into()))];
        let kernel = SyntheticKernel::uniform(
            0.0,
            BTreeMap::from([(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0), (4, 1.0)]),
        );
        let summary = run_conditional_study(&kernel, &problems, 16, 4, 9).unwrap();
        assert_eq!(summary.oracle_tenths, 0);
        assert_eq!(summary.majority_tenths, 0);
        assert_eq!(summary.bon_tenths, 0);
        assert_eq!(summary.self_refine_tenths, 1000);
        assert_eq!(summary.zero_correct_recoveries, 16);
        assert_eq!(summary.ceiling_violations, 0);
    }

    #[test]
    fn study_is_deterministic_per_seed() {
        let problems: Vec<Problem> = (0..4)
            .map(|i| Problem::new(format!("p{i}"), format!("statement {i}"), Some("5".into())))
            .collect();
        let kernel = SyntheticKernel::uniform(
            0.5,
            BTreeMap::from([(0, 0.1), (1, 0.5), (2, 0.7), (3, 0.9), (4, 1.0)]),
        );
        let a = run_conditional_study(&kernel, &problems, 10, 4, 21).unwrap();
        let b = run_conditional_study(&kernel, &problems, 10, 4, 21).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
