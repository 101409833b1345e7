//! Python bindings over the core harness: answer verification, prompt
//! rendering, aggregation strategies on explicit data, loss references,
//! curation rules, and the bundled reference tables with their synthetic
//! Monte-Carlo studies.
//!
//! Structured results cross the boundary as plain dicts/lists mirroring the
//! crate's serde schemas.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use gsr_core::answer;
use gsr_core::answer::{Verdict, VerdictReason};
use gsr_core::backend::TokenUsage;
use gsr_core::curation;
use gsr_core::metrics;
use gsr_core::prompt::{self, CandidateGroup, CandidateResponse, Problem};
use gsr_core::reference;
use gsr_core::strategies;
use gsr_core::study;
use gsr_core::tokens::ApproxTokenCounter;

fn value_error(message: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(message.to_string())
}

fn runtime_error(message: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(message.to_string())
}

/// serde_json::Value -> native Python object.
fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty_bound(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.into_py(py)
        }
    })
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let json = serde_json::to_value(value).map_err(runtime_error)?;
    json_to_py(py, &json)
}

/// Content and byte span of the last balanced boxed expression, or None.
#[pyfunction]
fn extract_boxed(text: &str) -> Option<(String, usize, usize)> {
    answer::extract_boxed(text).map(|r| (r.text, r.source_span.start, r.source_span.end))
}

/// Canonical form of an answer string: (canonical, kind, numeric or None).
#[pyfunction]
fn normalize_answer(text: &str) -> (String, String, Option<String>) {
    let n = answer::normalize_text(text);
    let kind = match n.kind {
        answer::AnswerKind::Rational => "rational",
        answer::AnswerKind::Decimal => "decimal",
        answer::AnswerKind::SymbolicString => "symbolic_string",
    };
    let numeric = n.numeric_value.map(|v| format!("{}/{}", v.numer(), v.denom()));
    (n.canonical, kind.to_string(), numeric)
}

#[pyfunction]
fn answers_equivalent(a: &str, b: &str) -> bool {
    answer::answers_equivalent(&answer::normalize_text(a), &answer::normalize_text(b))
}

/// Checks a full response against a ground truth:
/// (correct, reason, extracted or None).
#[pyfunction]
fn verify(response_text: &str, ground_truth: &str) -> (bool, String, Option<String>) {
    let v = answer::verify(response_text, ground_truth);
    let reason = match v.reason {
        VerdictReason::Match => "match",
        VerdictReason::Mismatch => "mismatch",
        VerdictReason::NoBoxedAnswer => "no_boxed_answer",
    };
    (v.correct, reason.to_string(), v.extracted.map(|r| r.text))
}

#[pyfunction]
fn split_thinking_summary(raw_text: &str) -> (String, String) {
    prompt::split_thinking_summary(raw_text)
}

#[pyfunction]
fn build_direct_prompt(statement: &str) -> PyResult<String> {
    let problem = Problem::new("py", statement, None);
    prompt::build_direct_prompt(&problem).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (statement, summaries, per_candidate_budget = prompt::DEFAULT_PER_CANDIDATE_BUDGET))]
fn build_refinement_prompt(
    statement: &str,
    summaries: Vec<String>,
    per_candidate_budget: usize,
) -> PyResult<String> {
    let problem = Problem::new("py", statement, None);
    let counter = ApproxTokenCounter::default();
    let candidates: Vec<CandidateResponse> = summaries
        .into_iter()
        .enumerate()
        .map(|(i, s)| CandidateResponse::from_generation(i as u32, s, TokenUsage::default(), &counter))
        .collect();
    let group = CandidateGroup::new("py", candidates).map_err(value_error)?;
    prompt::build_refinement_prompt(&problem, &group, per_candidate_budget, &counter)
        .map(|p| p.text)
        .map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (summary, per_candidate_budget))]
fn truncate_candidate(summary: &str, per_candidate_budget: usize) -> PyResult<(String, bool)> {
    prompt::truncate_candidate(summary, per_candidate_budget, &ApproxTokenCounter::default())
        .map_err(value_error)
}

fn group_from_answers(answers: &[Option<String>], ground_truth: &str) -> PyResult<CandidateGroup> {
    let counter = ApproxTokenCounter::default();
    let candidates: Vec<CandidateResponse> = answers
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let text = match a {
                Some(a) => format!("candidate {i} concludes \\boxed{{{a}}}"),
                None => format!("candidate {i} never produced a final answer"),
            };
            CandidateResponse::from_generation(i as u32, text.clone(), TokenUsage::default(), &counter)
                .with_verdict(answer::verify(&text, ground_truth))
        })
        .collect();
    CandidateGroup::new("py", candidates).map_err(value_error)
}

/// Majority vote over extracted answers (None = extraction failure).
/// Returns (chosen answer or None, correct).
#[pyfunction]
fn majority_vote(answers: Vec<Option<String>>, ground_truth: &str) -> PyResult<(Option<String>, bool)> {
    let group = group_from_answers(&answers, ground_truth)?;
    let outcome = strategies::majority_vote(&group).map_err(value_error)?;
    Ok((outcome.chosen_answer.map(|a| a.canonical), outcome.correct))
}

/// Oracle pass@k over extracted answers.
#[pyfunction]
fn pass_at_k(answers: Vec<Option<String>>, ground_truth: &str) -> PyResult<bool> {
    let group = group_from_answers(&answers, ground_truth)?;
    Ok(strategies::pass_at_k_oracle(&group).map_err(value_error)?.correct)
}

/// Knockout tournament with the ground-truth judge.
#[pyfunction]
fn knockout_oracle(answers: Vec<Option<String>>, ground_truth: &str) -> PyResult<bool> {
    let problem = Problem::new("py", "statement", Some(ground_truth.to_string()));
    let group = group_from_answers(&answers, ground_truth)?;
    Ok(
        strategies::best_of_n_knockout(&problem, &group, &strategies::OracleScorer)
            .map_err(value_error)?
            .correct,
    )
}

/// Reference sequence loss: -sum(logprobs).
#[pyfunction]
fn nll_loss(target_logprobs: Vec<f64>) -> PyResult<f64> {
    curation::nll_loss(&target_logprobs).map_err(value_error)
}

/// (direct mean, self-refine mean, combined total).
#[pyfunction]
fn combine_losses(direct_losses: Vec<f64>, refine_losses: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let combined = curation::combine_losses(&direct_losses, &refine_losses).map_err(value_error)?;
    Ok((combined.direct_mean, combined.self_refine_mean, combined.total))
}

/// Candidate-set composition over correctness flags (six candidates in,
/// four out). Returns (original_index, correct) pairs in final order.
#[pyfunction]
fn select_candidate_set(correct_flags: Vec<bool>, seed: u64) -> PyResult<Vec<(usize, bool)>> {
    let counter = ApproxTokenCounter::default();
    let candidates: Vec<CandidateResponse> = correct_flags
        .iter()
        .enumerate()
        .map(|(i, correct)| {
            CandidateResponse::from_generation(i as u32, i.to_string(), TokenUsage::default(), &counter)
                .with_verdict(Verdict {
                    correct: *correct,
                    extracted: None,
                    reason: if *correct { VerdictReason::Match } else { VerdictReason::Mismatch },
                })
        })
        .collect();
    let set = curation::select_candidate_set(&candidates, seed)
        .map_err(|reason| value_error(format!("skip: {reason:?}")))?;
    Ok(set
        .into_iter()
        .map(|c| {
            let index = c.summary.parse::<usize>().expect("index payload");
            let correct = c.verdict.as_ref().is_some_and(|v| v.correct);
            (index, correct)
        })
        .collect())
}

/// Teacher-retention rule over ten correctness flags; returns the kept
/// original indices.
#[pyfunction]
fn retain_teacher_solutions(correct_flags: Vec<bool>, seed: u64) -> PyResult<Vec<usize>> {
    let solutions: Vec<curation::Generation> = correct_flags
        .iter()
        .enumerate()
        .map(|(i, correct)| curation::Generation {
            text: i.to_string(),
            verdict: Verdict {
                correct: *correct,
                extracted: None,
                reason: if *correct { VerdictReason::Match } else { VerdictReason::Mismatch },
            },
        })
        .collect();
    let kept = curation::retain_teacher_solutions(&solutions, seed).map_err(value_error)?;
    Ok(kept
        .into_iter()
        .map(|g| g.text.parse::<usize>().expect("index payload"))
        .collect())
}

/// Pass-rate band filter over optional rates; returns kept indices.
#[pyfunction]
fn filter_pass_rate(rates: Vec<Option<f64>>, lo: f64, hi: f64) -> PyResult<Vec<usize>> {
    if lo > hi {
        return Err(value_error("inverted band"));
    }
    Ok(rates
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_some_and(|p| lo <= p && p <= hi))
        .map(|(i, _)| i)
        .collect())
}

/// Weighted roll-up of (total, ratio_percent) buckets, one decimal.
#[pyfunction]
fn expected_accuracy(buckets: Vec<(u64, f64)>) -> PyResult<f64> {
    let buckets: Vec<metrics::ConditionalBucket> = buckets
        .into_iter()
        .enumerate()
        .map(|(n, (total, ratio))| {
            metrics::ConditionalBucket::from_ratio(n as u32, total, (ratio * 10.0).round() as i64)
        })
        .collect();
    metrics::expected_accuracy(&buckets)
        .map(metrics::tenths_to_percent)
        .map_err(value_error)
}

/// Names of the bundled reference benchmarks.
#[pyfunction]
fn reference_benchmarks() -> Vec<String> {
    reference::fixture()
        .benchmarks
        .iter()
        .map(|b| b.name.clone())
        .collect()
}

/// Rolls a bundled reference table into headline numbers and buckets.
#[pyfunction]
fn reference_replay(py: Python<'_>, benchmark: &str) -> PyResult<PyObject> {
    let bench = reference::benchmark(benchmark)
        .ok_or_else(|| value_error(format!("unknown benchmark {benchmark}")))?;
    let report = bench.replay_report().map_err(runtime_error)?;
    let dict = PyDict::new_bound(py);
    let pct = |v: Option<i64>| v.map(metrics::tenths_to_percent);
    dict.set_item("benchmark", &report.benchmark)?;
    dict.set_item("k", report.k)?;
    dict.set_item("trials", report.trials)?;
    dict.set_item("pass1", pct(report.pass1_tenths))?;
    dict.set_item("majority", pct(report.majority_tenths))?;
    dict.set_item("self_refine", pct(report.self_refine_tenths))?;
    dict.set_item("oracle", pct(report.oracle_tenths))?;
    dict.set_item("buckets", to_py(py, &report.buckets)?)?;
    Ok(dict.into_py(py))
}

/// Seeded Monte-Carlo study on a kernel calibrated to a reference
/// benchmark. Returns the full study summary as a dict.
#[pyfunction]
#[pyo3(signature = (benchmark, groups_per_problem = 32, k = 4, seed = 0, recover = None))]
fn run_conditional_study(
    py: Python<'_>,
    benchmark: &str,
    groups_per_problem: u32,
    k: usize,
    seed: u64,
    recover: Option<Vec<f64>>,
) -> PyResult<PyObject> {
    let bench = reference::benchmark(benchmark)
        .ok_or_else(|| value_error(format!("unknown benchmark {benchmark}")))?;
    let mut kernel = bench.kernel();
    if let Some(recover) = recover {
        kernel.recover = recover
            .into_iter()
            .enumerate()
            .map(|(n, p)| (n as u32, p))
            .collect::<BTreeMap<u32, f64>>();
    }
    let problems = bench.study_problems();
    let summary = study::run_conditional_study(&kernel, &problems, groups_per_problem, k, seed)
        .map_err(runtime_error)?;
    to_py(py, &summary)
}

#[pymodule]
fn gsr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("DEFAULT_PER_CANDIDATE_BUDGET", prompt::DEFAULT_PER_CANDIDATE_BUDGET)?;
    m.add_function(wrap_pyfunction!(extract_boxed, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(answers_equivalent, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(split_thinking_summary, m)?)?;
    m.add_function(wrap_pyfunction!(build_direct_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(build_refinement_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(truncate_candidate, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_function(wrap_pyfunction!(pass_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(knockout_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(nll_loss, m)?)?;
    m.add_function(wrap_pyfunction!(combine_losses, m)?)?;
    m.add_function(wrap_pyfunction!(select_candidate_set, m)?)?;
    m.add_function(wrap_pyfunction!(retain_teacher_solutions, m)?)?;
    m.add_function(wrap_pyfunction!(filter_pass_rate, m)?)?;
    m.add_function(wrap_pyfunction!(expected_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(reference_benchmarks, m)?)?;
    m.add_function(wrap_pyfunction!(reference_replay, m)?)?;
    m.add_function(wrap_pyfunction!(run_conditional_study, m)?)?;
    Ok(())
}
