//! Hybrid SFT data curation: pass-rate banding, candidate-set composition,
//! prompt-length filtering, teacher-solution retention, and the merged
//! direct + self-refinement dataset, plus the reference NLL computation.
//!
//! Gradient-based training itself is out of scope; this pipeline emits
//! training-ready records and computes losses from supplied token
//! log-probabilities. Every stage is a pure function of (input, seed).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answer::Verdict;
use crate::prompt::{
    build_direct_prompt, build_refinement_prompt, AugmentedPrompt, CandidateGroup,
    CandidateResponse, Problem, PromptError, DEFAULT_PER_CANDIDATE_BUDGET,
};
use crate::tokens::TokenCounter;
use crate::util::{derive_seed, sha256_hex};

/// One generated solution with its correctness verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub verdict: Verdict,
}

/// A pooled problem with its graded generations and difficulty metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPoolRecord {
    pub problem: Problem,
    pub generations: Vec<Generation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pass_rate: Option<f64>,
    #[serde(default)]
    pub flags: BTreeMap<String, String>,
}

/// One curated refinement example: the fixed-size candidate set, its
/// rendered augmented prompt, and the retained teacher targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementExample {
    pub problem: Problem,
    pub candidate_set: Vec<CandidateResponse>,
    pub augmented_prompt: AugmentedPrompt,
    pub targets: Vec<Generation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftTask {
    Direct,
    SelfRefine,
}

/// One training-ready record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub task: SftTask,
    pub prompt: String,
    pub target: String,
    pub problem_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("expected exactly {expected} teacher solutions, got {got}")]
    SolutionCount { expected: usize, got: usize },
    #[error("invalid log-probability {0}; entries must be finite and <= 0")]
    InvalidLogprob(f64),
    #[error("{which} loss set is empty")]
    EmptyLossSet { which: &'static str },
    #[error("{which} record set is empty")]
    EmptyRecordSet { which: &'static str },
    #[error("pass-rate band is inverted: lo {lo} > hi {hi}")]
    InvertedBand { lo: f64, hi: f64 },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Why a problem was skipped rather than failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    TooFewUsableCandidates,
    NoCorrectTeacherSolution,
}

/// Keeps records whose pass rate lies inside `[lo, hi]` (inclusive);
/// records without a pass rate are dropped.
pub fn filter_pass_rate(
    pool: Vec<RawPoolRecord>,
    lo: f64,
    hi: f64,
) -> Result<Vec<RawPoolRecord>, CurationError> {
    if lo > hi {
        return Err(CurationError::InvertedBand { lo, hi });
    }
    Ok(pool
        .into_iter()
        .filter(|r| r.pass_rate.is_some_and(|p| lo <= p && p <= hi))
        .collect())
}

/// Composes the fixed-size candidate set for one refinement example: all
/// correct candidates (seeded-random four of them when more than four),
/// filled to four with seeded-random incorrect ones, then the final order
/// is shuffled. Candidates without verdicts are unusable.
pub fn select_candidate_set(
    candidates: &[CandidateResponse],
    rng_seed: u64,
) -> Result<Vec<CandidateResponse>, SkipReason> {
    const SET_SIZE: usize = 4;
    let usable: Vec<&CandidateResponse> =
        candidates.iter().filter(|c| c.verdict.is_some()).collect();
    if usable.len() < SET_SIZE {
        return Err(SkipReason::TooFewUsableCandidates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (correct, incorrect): (Vec<&CandidateResponse>, Vec<&CandidateResponse>) = usable
        .iter()
        .partition(|c| c.verdict.as_ref().is_some_and(|v| v.correct));
    let mut chosen: Vec<&CandidateResponse> = if correct.len() > SET_SIZE {
        correct
            .choose_multiple(&mut rng, SET_SIZE)
            .copied()
            .collect()
    } else {
        let mut set = correct.clone();
        let fill = SET_SIZE - set.len();
        set.extend(incorrect.choose_multiple(&mut rng, fill).copied());
        set
    };
    chosen.shuffle(&mut rng);
    // Re-index in the shuffled order; this order is what the prompt renders.
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut c = c.clone();
            c.sample_index = i as u32;
            c
        })
        .collect())
}

/// Keeps examples whose rendered prompt is at most `max_tokens` long
/// (inclusive boundary: only prompts that exceed the limit are removed).
pub fn filter_prompt_length(
    examples: Vec<RefinementExample>,
    max_tokens: usize,
    counter: &dyn TokenCounter,
) -> Vec<RefinementExample> {
    examples
        .into_iter()
        .filter(|e| counter.count(&e.augmented_prompt.text) <= max_tokens)
        .collect()
}

/// Retention rule over exactly ten graded teacher solutions: none correct
/// drops the problem, one to nine correct keeps all the correct ones, a
/// perfect ten keeps a seeded-random four.
pub fn retain_teacher_solutions(
    solutions: &[Generation],
    rng_seed: u64,
) -> Result<Vec<Generation>, CurationError> {
    const EXPECTED: usize = 10;
    const PERFECT_KEEP: usize = 4;
    if solutions.len() != EXPECTED {
        return Err(CurationError::SolutionCount {
            expected: EXPECTED,
            got: solutions.len(),
        });
    }
    let correct: Vec<&Generation> = solutions.iter().filter(|s| s.verdict.correct).collect();
    if correct.is_empty() {
        return Ok(Vec::new());
    }
    if correct.len() == EXPECTED {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        return Ok(correct
            .choose_multiple(&mut rng, PERFECT_KEEP)
            .map(|g| (*g).clone())
            .collect());
    }
    Ok(correct.into_iter().cloned().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TaskCounts {
    pub direct: usize,
    pub self_refine: usize,
}

/// Concatenates both task datasets and applies one seeded shuffle.
pub fn merge_hybrid(
    direct: Vec<SftRecord>,
    refine: Vec<SftRecord>,
    rng_seed: u64,
) -> Result<(Vec<SftRecord>, TaskCounts), CurationError> {
    if direct.is_empty() {
        return Err(CurationError::EmptyRecordSet { which: "direct" });
    }
    if refine.is_empty() {
        return Err(CurationError::EmptyRecordSet { which: "self_refine" });
    }
    let counts = TaskCounts {
        direct: direct.len(),
        self_refine: refine.len(),
    };
    let mut merged = direct;
    merged.extend(refine);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    merged.shuffle(&mut rng);
    Ok((merged, counts))
}

/// Reference sequence loss: the negated sum of target-token
/// log-probabilities. Linear under concatenation.
pub fn nll_loss(target_logprobs: &[f64]) -> Result<f64, CurationError> {
    let mut sum = 0.0;
    for lp in target_logprobs {
        if !lp.is_finite() || *lp > 0.0 {
            return Err(CurationError::InvalidLogprob(*lp));
        }
        sum += lp;
    }
    Ok(-sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedLoss {
    pub direct_mean: f64,
    pub self_refine_mean: f64,
    /// Sum of the two per-task expectations.
    pub total: f64,
}

/// Combines per-sequence losses into the hybrid objective: the mean over
/// each task's set, summed.
pub fn combine_losses(
    direct_losses: &[f64],
    refine_losses: &[f64],
) -> Result<CombinedLoss, CurationError> {
    if direct_losses.is_empty() {
        return Err(CurationError::EmptyLossSet { which: "direct" });
    }
    if refine_losses.is_empty() {
        return Err(CurationError::EmptyLossSet { which: "self_refine" });
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let direct_mean = mean(direct_losses);
    let self_refine_mean = mean(refine_losses);
    Ok(CombinedLoss {
        direct_mean,
        self_refine_mean,
        total: direct_mean + self_refine_mean,
    })
}

/// Everything the pipeline needs for one problem: the pooled record, the
/// student candidate pool (six), and the graded teacher solutions (ten).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationInput {
    pub record: RawPoolRecord,
    pub student_candidates: Vec<Generation>,
    pub teacher_solutions: Vec<Generation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationConfig {
    pub pass_rate_lo: f64,
    pub pass_rate_hi: f64,
    pub max_prompt_tokens: usize,
    pub per_candidate_budget: usize,
    pub seed: u64,
    /// Number of direct records to sample; defaults to the refinement
    /// record count so the mix stays balanced.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub direct_total: Option<usize>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            pass_rate_lo: 0.25,
            pass_rate_hi: 0.90,
            max_prompt_tokens: 8192,
            per_candidate_budget: DEFAULT_PER_CANDIDATE_BUDGET,
            seed: 0,
            direct_total: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub problems: usize,
}

/// Replayable account of one pipeline run: stage counts, skip tallies,
/// seeds, and the config hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationManifest {
    pub seed: u64,
    pub config_hash: String,
    pub stages: Vec<StageCount>,
    pub skips: BTreeMap<String, usize>,
    pub task_counts: TaskCounts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationOutput {
    pub dataset: Vec<SftRecord>,
    pub manifest: CurationManifest,
}

/// Runs the full curation pipeline. Deterministic in (inputs, config).
pub fn run_pipeline(
    inputs: Vec<CurationInput>,
    config: &CurationConfig,
    counter: &dyn TokenCounter,
) -> Result<CurationOutput, CurationError> {
    let config_hash = sha256_hex(
        serde_json::to_string(config)
            .expect("config serializes")
            .as_bytes(),
    );
    let mut stages = Vec::new();
    let mut skips: BTreeMap<String, usize> = BTreeMap::new();
    stages.push(StageCount {
        stage: "input".into(),
        problems: inputs.len(),
    });

    // Pass-rate band on the pooled records.
    let records: Vec<RawPoolRecord> = inputs.iter().map(|i| i.record.clone()).collect();
    let banded_ids: std::collections::BTreeSet<String> =
        filter_pass_rate(records, config.pass_rate_lo, config.pass_rate_hi)?
            .into_iter()
            .map(|r| r.problem.id)
            .collect();
    let banded: Vec<&CurationInput> = inputs
        .iter()
        .filter(|i| banded_ids.contains(&i.record.problem.id))
        .collect();
    stages.push(StageCount {
        stage: "pass_rate_band".into(),
        problems: banded.len(),
    });

    // Candidate-set composition and prompt construction.
    let mut examples = Vec::new();
    for input in &banded {
        let problem = &input.record.problem;
        let candidates: Vec<CandidateResponse> = input
            .student_candidates
            .iter()
            .enumerate()
            .map(|(i, g)| {
                CandidateResponse::from_generation(
                    i as u32,
                    g.text.clone(),
                    crate::backend::TokenUsage::default(),
                    counter,
                )
                .with_verdict(g.verdict.clone())
            })
            .collect();
        let seed = derive_seed(config.seed, &["candidate_set", &problem.id]);
        let set = match select_candidate_set(&candidates, seed) {
            Ok(set) => set,
            Err(reason) => {
                *skips.entry(format!("{reason:?}")).or_default() += 1;
                continue;
            }
        };
        let group = CandidateGroup::new(&problem.id, set.clone())?;
        let augmented =
            build_refinement_prompt(problem, &group, config.per_candidate_budget, counter)?;
        examples.push(RefinementExample {
            problem: problem.clone(),
            candidate_set: set,
            augmented_prompt: augmented,
            targets: input.teacher_solutions.clone(),
        });
    }
    stages.push(StageCount {
        stage: "candidate_sets".into(),
        problems: examples.len(),
    });

    // Prompt-length cut.
    let examples = filter_prompt_length(examples, config.max_prompt_tokens, counter);
    stages.push(StageCount {
        stage: "prompt_length".into(),
        problems: examples.len(),
    });

    // Teacher retention.
    let mut refine_records = Vec::new();
    let mut retained_problems = 0usize;
    for example in &examples {
        let seed = derive_seed(config.seed, &["teacher_retention", &example.problem.id]);
        let kept = retain_teacher_solutions(&example.targets, seed)?;
        if kept.is_empty() {
            *skips
                .entry(format!("{:?}", SkipReason::NoCorrectTeacherSolution))
                .or_default() += 1;
            continue;
        }
        retained_problems += 1;
        for target in kept {
            refine_records.push(SftRecord {
                task: SftTask::SelfRefine,
                prompt: example.augmented_prompt.text.clone(),
                target: target.text,
                problem_id: example.problem.id.clone(),
            });
        }
    }
    stages.push(StageCount {
        stage: "teacher_retention".into(),
        problems: retained_problems,
    });

    // Direct-answer records sampled from the banded pool's correct
    // generations; only correct outputs are ever emitted as targets.
    let mut direct_pool: Vec<SftRecord> = Vec::new();
    for input in &banded {
        let prompt = build_direct_prompt(&input.record.problem)?;
        for g in &input.record.generations {
            if g.verdict.correct {
                direct_pool.push(SftRecord {
                    task: SftTask::Direct,
                    prompt: prompt.clone(),
                    target: g.text.clone(),
                    problem_id: input.record.problem.id.clone(),
                });
            }
        }
    }
    let target_direct = config.direct_total.unwrap_or(refine_records.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["direct_sample"]));
    let direct_records: Vec<SftRecord> = if direct_pool.len() > target_direct {
        let mut sampled: Vec<SftRecord> = direct_pool
            .choose_multiple(&mut rng, target_direct)
            .cloned()
            .collect();
        sampled.shuffle(&mut rng);
        sampled
    } else {
        direct_pool
    };
    stages.push(StageCount {
        stage: "direct_sample".into(),
        problems: direct_records.len(),
    });

    let (dataset, task_counts) = merge_hybrid(
        direct_records,
        refine_records,
        derive_seed(config.seed, &["merge"]),
    )?;
    stages.push(StageCount {
        stage: "merged".into(),
        problems: dataset.len(),
    });

    Ok(CurationOutput {
        dataset,
        manifest: CurationManifest {
            seed: config.seed,
            config_hash,
            stages,
            skips,
            task_counts,
        },
    })
}
