//! Statistical synthetic backend.
//!
//! Stands in for a policy model at desk scale: direct sampling succeeds with
//! a per-problem probability, refinement succeeds with a probability
//! conditioned on how many candidates in the prompt are correct. Everything
//! is a pure function of the seed, so whole experiments replay byte for
//! byte.

use std::collections::BTreeMap;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, FinishReason, GenerationRequest, GenerationResult, TokenUsage};
use crate::answer::{answers_equivalent, extract_boxed, normalize_answer, normalize_text};
use crate::prompt::{CandidateGroup, Problem};
use crate::tokens::{ApproxTokenCounter, TokenCounter};
use crate::util::derive_seed;

/// Success probabilities driving the synthetic backend.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SyntheticKernel {
    /// Direct-solve success probability per problem id.
    #[serde(default)]
    pub p_correct: BTreeMap<String, f64>,
    /// Fallback when a problem has no dedicated entry.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub default_p_correct: Option<f64>,
    /// Refinement success probability keyed by the number of correct
    /// candidates in the group.
    #[serde(default, with = "u32_key_map")]
    pub recover: BTreeMap<u32, f64>,
}

/// TOML and JSON map keys are strings; bridge them to the numeric keys the
/// recover table uses.
mod u32_key_map {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<u32, f64>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        let string_keyed: BTreeMap<String, f64> =
            map.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        string_keyed.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<u32, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(deserializer)?
            .into_iter()
            .map(|(k, v)| k.parse::<u32>().map(|k| (k, v)).map_err(D::Error::custom))
            .collect()
    }
}

impl SyntheticKernel {
    pub fn uniform(p_correct: f64, recover: BTreeMap<u32, f64>) -> Self {
        Self {
            p_correct: BTreeMap::new(),
            default_p_correct: Some(p_correct),
            recover,
        }
    }

    pub fn set_problem(&mut self, problem_id: impl Into<String>, p: f64) {
        self.p_correct.insert(problem_id.into(), p);
    }

    pub fn p_correct_for(&self, problem_id: &str) -> Option<f64> {
        self.p_correct
            .get(problem_id)
            .copied()
            .or(self.default_p_correct)
    }

    pub fn recover_for(&self, n_correct: u32) -> Option<f64> {
        self.recover.get(&n_correct).copied()
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let all = self
            .p_correct
            .values()
            .chain(self.default_p_correct.iter())
            .chain(self.recover.values());
        for p in all {
            if !(0.0..=1.0).contains(p) {
                return Err(BackendError::InvalidRequest(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Emits one synthetic response. Correct responses box the ground truth;
/// incorrect ones box a wrong integer drawn from the rng.
fn emit(problem: &Problem, correct: bool, rng: &mut ChaCha8Rng) -> Result<GenerationResult, BackendError> {
    let truth = problem
        .ground_truth
        .as_deref()
        .ok_or_else(|| BackendError::MissingGroundTruth(problem.id.clone()))?;
    let answer = if correct {
        truth.to_string()
    } else {
        let want = normalize_text(truth);
        loop {
            let candidate = rng.gen_range(0u64..1_000_000).to_string();
            if !answers_equivalent(&normalize_text(&candidate), &want) {
                break candidate;
            }
        }
    };
    let thinking = format!(
        "Working through {} step by step; weighing the candidate approaches before settling.",
        problem.id
    );
    let summary = format!("The final answer is \\boxed{{{answer}}}.");
    let text = format!("<think>{thinking}</think>\n{summary}");
    let counter = ApproxTokenCounter::default();
    let thinking_tokens = counter.count(&thinking) as u64;
    let summary_tokens = counter.count(&summary) as u64;
    Ok(GenerationResult {
        text,
        usage: TokenUsage {
            prompt_tokens: 0,
            completion_tokens: thinking_tokens + summary_tokens,
            thinking_tokens,
            summary_tokens,
        },
        token_logprobs: None,
        finish_reason: FinishReason::Stop,
    })
}

/// Draws one direct-solving sample: correct with the problem's configured
/// probability. Reproducible given `(problem.id, rng_seed)`.
pub fn synthetic_sample(
    problem: &Problem,
    kernel: &SyntheticKernel,
    rng_seed: u64,
) -> Result<GenerationResult, BackendError> {
    let p = kernel
        .p_correct_for(&problem.id)
        .ok_or_else(|| BackendError::UnknownProblem(problem.id.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, &[&problem.id, "direct"]));
    let correct = rng.gen::<f64>() < p;
    emit(problem, correct, &mut rng)
}

/// Draws one refinement outcome: computes the group's number of correct
/// candidates and succeeds with the corresponding recovery probability.
pub fn synthetic_refine(
    problem: &Problem,
    group: &CandidateGroup,
    kernel: &SyntheticKernel,
    rng_seed: u64,
) -> Result<GenerationResult, BackendError> {
    for (i, c) in group.candidates.iter().enumerate() {
        if c.verdict.is_none() {
            return Err(BackendError::MissingVerdict(i));
        }
    }
    let n_correct = group.n_correct().expect("verdicts checked above");
    refine_with_n_correct(problem, n_correct, kernel, rng_seed)
}

fn refine_with_n_correct(
    problem: &Problem,
    n_correct: u32,
    kernel: &SyntheticKernel,
    rng_seed: u64,
) -> Result<GenerationResult, BackendError> {
    let p = kernel
        .recover_for(n_correct)
        .ok_or(BackendError::MissingRecovery(n_correct))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, &[&problem.id, "refine"]));
    let correct = rng.gen::<f64>() < p;
    emit(problem, correct, &mut rng)
}

/// Drop-in [`Backend`] over a [`SyntheticKernel`].
///
/// Requests are routed on their tag: direct prompts draw from the
/// per-problem success probability, refinement prompts are parsed to
/// recover the problem and the candidates' boxed answers, which determine
/// the recovery probability. The problem is located by its statement, so
/// the backend works against prompts rendered by the prompting module.
pub struct SyntheticBackend {
    kernel: SyntheticKernel,
    by_id: BTreeMap<String, Problem>,
    by_statement: BTreeMap<String, String>,
    base_seed: u64,
}

impl SyntheticBackend {
    pub fn new(kernel: SyntheticKernel, problems: Vec<Problem>, base_seed: u64) -> Result<Self, BackendError> {
        kernel.validate()?;
        let mut by_id = BTreeMap::new();
        let mut by_statement = BTreeMap::new();
        for p in problems {
            by_statement.insert(p.statement.clone(), p.id.clone());
            by_id.insert(p.id.clone(), p);
        }
        Ok(Self {
            kernel,
            by_id,
            by_statement,
            base_seed,
        })
    }

    fn seed_for(&self, request: &GenerationRequest) -> u64 {
        request
            .seed
            .unwrap_or_else(|| derive_seed(self.base_seed, &[&request.prompt]))
    }

    fn lookup(&self, statement: &str) -> Result<&Problem, BackendError> {
        let id = self
            .by_statement
            .get(statement)
            .ok_or_else(|| BackendError::UnknownProblem(format!("statement: {statement:.60}")))?;
        Ok(&self.by_id[id])
    }

    fn handle_direct(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        const SUFFIX: &str = "\nThink step by step and put final answer within \\boxed{}.";
        let statement = request
            .prompt
            .strip_suffix(SUFFIX)
            .ok_or_else(|| BackendError::Protocol("unrecognized direct prompt shape".into()))?;
        let problem = self.lookup(statement)?;
        synthetic_sample(problem, &self.kernel, self.seed_for(request))
    }

    fn handle_refine(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        const PROBLEM_OPEN: &str = "Problem:\n";
        const PROBLEM_CLOSE: &str = "\nThink step by step and put final answer within \\boxed{}.\n";
        let prompt = &request.prompt;
        let start = prompt
            .find(PROBLEM_OPEN)
            .ok_or_else(|| BackendError::Protocol("refinement prompt lacks problem block".into()))?
            + PROBLEM_OPEN.len();
        let end = prompt[start..]
            .find(PROBLEM_CLOSE)
            .ok_or_else(|| BackendError::Protocol("refinement prompt lacks instruction line".into()))?
            + start;
        let problem = self.lookup(&prompt[start..end])?;
        let truth = problem
            .ground_truth
            .as_deref()
            .ok_or_else(|| BackendError::MissingGroundTruth(problem.id.clone()))?;
        let want = normalize_text(truth);

        // Count correct candidates among the labeled blocks.
        let mut n_correct = 0u32;
        let mut cursor = end;
        let mut index = 1usize;
        loop {
            let label = format!("Candidate Response {index}:\n");
            let Some(found) = prompt[cursor..].find(&label) else {
                break;
            };
            let block_start = cursor + found + label.len();
            let next_label = format!("\nCandidate Response {}:\n", index + 1);
            let block_end = prompt[block_start..]
                .find(&next_label)
                .map(|off| block_start + off)
                .unwrap_or(prompt.len());
            if let Some(raw) = extract_boxed(&prompt[block_start..block_end]) {
                if answers_equivalent(&normalize_answer(&raw), &want) {
                    n_correct += 1;
                }
            }
            cursor = block_end;
            index += 1;
        }
        if index == 1 {
            return Err(BackendError::Protocol("refinement prompt has no candidate blocks".into()));
        }
        refine_with_n_correct(problem, n_correct, &self.kernel, self.seed_for(request))
    }
}

#[async_trait]
impl Backend for SyntheticBackend {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        if request.tag == "refine" {
            self.handle_refine(request)
        } else {
            self.handle_direct(request)
        }
    }
}
