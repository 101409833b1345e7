//! `gsr simulate`: offline studies on the synthetic backend.
//!
//! Two modes: `replay` rolls a bundled reference table straight into report
//! files; `study` runs a seeded Monte-Carlo experiment on a calibrated
//! kernel, optionally sweeping the candidate count for scaling curves.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use gsr_core::backend::{DecodeParams, SyntheticBackend};
use gsr_core::harness::report::{self, fmt_tenths};
use gsr_core::metrics::{input_scaling_curve, RunReport};
use gsr_core::prompt::CandidateResponse;
use gsr_core::reference;
use gsr_core::strategies::StrategyKind;
use gsr_core::study::run_conditional_study;
use gsr_core::tokens::ApproxTokenCounter;
use gsr_core::util::derive_seed;

#[derive(Debug, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum SimulateConfig {
    /// Emit report files straight from a bundled reference table.
    Replay {
        benchmark: String,
        output_dir: std::path::PathBuf,
    },
    /// Seeded Monte-Carlo study on a kernel calibrated to a reference
    /// benchmark.
    Study {
        benchmark: String,
        output_dir: std::path::PathBuf,
        #[serde(default = "default_groups")]
        groups_per_problem: u32,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        seed: u64,
        /// Optional recovery override indexed by n_correct.
        #[serde(default)]
        recover: Option<Vec<f64>>,
        /// Optional candidate-count sweep; produces curve.csv.
        #[serde(default)]
        curve_k: Vec<usize>,
    },
}

fn default_groups() -> u32 {
    32
}
fn default_k() -> usize {
    4
}

pub async fn run(config_path: &Path) -> Result<()> {
    let raw = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: SimulateConfig = toml::from_str(&raw).context("parsing simulate config")?;
    match config {
        SimulateConfig::Replay { benchmark, output_dir } => {
            let bench = reference::benchmark(&benchmark)
                .with_context(|| format!("unknown reference benchmark {benchmark}"))?;
            let report = RunReport {
                benchmarks: vec![bench.replay_report()?],
            };
            std::fs::create_dir_all(&output_dir)?;
            report::write_reports(&output_dir, &report, &[], 0)?;
            let b = &report.benchmarks[0];
            println!(
                "{benchmark} replay: pass@1 {}  maj@{} {}  selfRef@{} {}  oracle@{} {}",
                b.pass1_tenths.map(fmt_tenths).unwrap_or_default(),
                b.k,
                b.majority_tenths.map(fmt_tenths).unwrap_or_else(|| "-".into()),
                b.k,
                b.self_refine_tenths.map(fmt_tenths).unwrap_or_default(),
                b.k,
                b.oracle_tenths.map(fmt_tenths).unwrap_or_default(),
            );
            println!("reports written to {}", output_dir.display());
        }
        SimulateConfig::Study {
            benchmark,
            output_dir,
            groups_per_problem,
            k,
            seed,
            recover,
            curve_k,
        } => {
            let bench = reference::benchmark(&benchmark)
                .with_context(|| format!("unknown reference benchmark {benchmark}"))?;
            let mut kernel = bench.kernel();
            if let Some(recover) = recover {
                kernel.recover = recover
                    .iter()
                    .enumerate()
                    .map(|(n, p)| (n as u32, *p))
                    .collect();
            }
            if kernel.recover.is_empty() {
                bail!("kernel has no recovery probabilities");
            }
            // Every reachable correct-candidate count needs a recovery
            // probability, including counts above the calibrated k when a
            // curve sweep is configured. Missing high counts are filled
            // from the largest configured count below them.
            let max_k = curve_k.iter().copied().max().unwrap_or(0).max(k);
            let mut last = None;
            for n in 0..=max_k as u32 {
                match kernel.recover_for(n) {
                    Some(p) => last = Some(p),
                    None => match last {
                        Some(p) => {
                            kernel.recover.insert(n, p);
                        }
                        None => bail!("recover[{n}] is not configured"),
                    },
                }
            }
            let problems = bench.study_problems();
            let summary = run_conditional_study(&kernel, &problems, groups_per_problem, k, seed)?;

            std::fs::create_dir_all(&output_dir)?;
            std::fs::write(
                output_dir.join("study.json"),
                serde_json::to_string_pretty(&summary)?,
            )?;
            println!(
                "{benchmark} study ({} groups, k={k}, seed={seed}): pass@1 {}  maj {}  BoN {}  selfRef {}  oracle {}",
                summary.groups,
                fmt_tenths(summary.pass1_tenths),
                fmt_tenths(summary.majority_tenths),
                fmt_tenths(summary.bon_tenths),
                fmt_tenths(summary.self_refine_tenths),
                fmt_tenths(summary.oracle_tenths),
            );
            println!(
                "zero-correct groups: {} with {} recoveries; ceiling violations: {}",
                summary.zero_correct_groups,
                summary.zero_correct_recoveries,
                summary.ceiling_violations
            );

            if !curve_k.is_empty() {
                let max_k = curve_k.iter().copied().max().unwrap_or(k);
                let counter = ApproxTokenCounter::default();
                // One shared pool of max_k verified samples per problem.
                let mut pool: BTreeMap<String, Vec<CandidateResponse>> = BTreeMap::new();
                for problem in &problems {
                    let truth = problem.ground_truth.as_deref().expect("study problems");
                    let samples: Vec<CandidateResponse> = (0..max_k as u32)
                        .map(|s| {
                            let cell = derive_seed(seed, &["curve-pool", &problem.id, &s.to_string()]);
                            let result = gsr_core::backend::synthetic_sample(problem, &kernel, cell)?;
                            Ok(CandidateResponse::from_generation(
                                s,
                                result.text.clone(),
                                result.usage,
                                &counter,
                            )
                            .with_verdict(gsr_core::answer::verify(&result.text, truth)))
                        })
                        .collect::<Result<_>>()?;
                    pool.insert(problem.id.clone(), samples);
                }
                let backend = SyntheticBackend::new(kernel.clone(), problems.clone(), seed)?;
                let decode = DecodeParams::tuned_eval().with_seed(derive_seed(seed, &["curve"]));
                let curve = input_scaling_curve(
                    &problems,
                    &pool,
                    &[
                        StrategyKind::Pass1,
                        StrategyKind::Majority,
                        StrategyKind::PasskOracle,
                        StrategyKind::SelfRefine,
                    ],
                    &curve_k,
                    &backend,
                    &decode,
                    gsr_core::prompt::DEFAULT_PER_CANDIDATE_BUDGET,
                    &counter,
                )
                .await?;
                std::fs::write(output_dir.join("curve.csv"), report::render_curve_csv(&curve))?;
                println!("curve.csv written ({} strategies)", curve.points.len());
            }
            println!("study artifacts written to {}", output_dir.display());
        }
    }
    Ok(())
}
