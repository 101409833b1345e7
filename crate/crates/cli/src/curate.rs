//! `gsr curate`: line-delimited JSON pool in, shuffled hybrid SFT dataset
//! plus a manifest out.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use gsr_core::answer::{verify, Verdict};
use gsr_core::curation::{run_pipeline, CurationConfig, CurationInput, Generation, RawPoolRecord};
use gsr_core::prompt::Problem;
use gsr_core::tokens::ApproxTokenCounter;

#[derive(Debug, Deserialize)]
struct CurateCliConfig {
    /// JSONL pool: one problem per line (see `RawInputLine`).
    input: PathBuf,
    output_dir: PathBuf,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_lo")]
    pass_rate_lo: f64,
    #[serde(default = "default_hi")]
    pass_rate_hi: f64,
    #[serde(default = "default_max_prompt")]
    max_prompt_tokens: usize,
    #[serde(default = "default_budget")]
    per_candidate_budget: usize,
    #[serde(default)]
    direct_total: Option<usize>,
}

fn default_lo() -> f64 {
    0.25
}
fn default_hi() -> f64 {
    0.90
}
fn default_max_prompt() -> usize {
    8192
}
fn default_budget() -> usize {
    gsr_core::prompt::DEFAULT_PER_CANDIDATE_BUDGET
}

/// A generation in the input file: verdicts may be supplied or computed
/// against the problem's ground truth.
#[derive(Debug, Deserialize)]
struct RawGeneration {
    text: String,
    #[serde(default)]
    verdict: Option<Verdict>,
}

#[derive(Debug, Deserialize)]
struct RawInputLine {
    problem: Problem,
    #[serde(default)]
    pass_rate: Option<f64>,
    #[serde(default)]
    flags: BTreeMap<String, String>,
    #[serde(default)]
    generations: Vec<RawGeneration>,
    student_candidates: Vec<RawGeneration>,
    teacher_solutions: Vec<RawGeneration>,
}

fn grade(problem: &Problem, raw: Vec<RawGeneration>) -> Result<Vec<Generation>> {
    raw.into_iter()
        .map(|g| {
            let verdict = match g.verdict {
                Some(v) => v,
                None => {
                    let truth = problem.ground_truth.as_deref().with_context(|| {
                        format!("problem {} has no ground truth to grade against", problem.id)
                    })?;
                    verify(&g.text, truth)
                }
            };
            Ok(Generation { text: g.text, verdict })
        })
        .collect()
}

pub fn run(config_path: &Path) -> Result<()> {
    let raw = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let cli_config: CurateCliConfig = toml::from_str(&raw).context("parsing curation config")?;

    let pool_raw = std::fs::read_to_string(&cli_config.input)
        .with_context(|| format!("reading {}", cli_config.input.display()))?;
    let mut inputs = Vec::new();
    for (number, line) in pool_raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RawInputLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", cli_config.input.display(), number + 1))?;
        let problem = parsed.problem;
        inputs.push(CurationInput {
            record: RawPoolRecord {
                generations: grade(&problem, parsed.generations)?,
                pass_rate: parsed.pass_rate,
                flags: parsed.flags,
                problem: problem.clone(),
            },
            student_candidates: grade(&problem, parsed.student_candidates)?,
            teacher_solutions: grade(&problem, parsed.teacher_solutions)?,
        });
    }
    if inputs.is_empty() {
        bail!("{} holds no pool records", cli_config.input.display());
    }

    let pipeline_config = CurationConfig {
        pass_rate_lo: cli_config.pass_rate_lo,
        pass_rate_hi: cli_config.pass_rate_hi,
        max_prompt_tokens: cli_config.max_prompt_tokens,
        per_candidate_budget: cli_config.per_candidate_budget,
        seed: cli_config.seed,
        direct_total: cli_config.direct_total,
    };
    let counter = ApproxTokenCounter::default();
    let output = run_pipeline(inputs, &pipeline_config, &counter)?;

    std::fs::create_dir_all(&cli_config.output_dir)?;
    let dataset_path = cli_config.output_dir.join("dataset.jsonl");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&dataset_path)?);
    for record in &output.dataset {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    std::fs::write(
        cli_config.output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&output.manifest)?,
    )?;

    println!("dataset: {}", dataset_path.display());
    for stage in &output.manifest.stages {
        println!("  {:<20} {}", stage.stage, stage.problems);
    }
    println!(
        "  tasks: {} direct + {} self_refine",
        output.manifest.task_counts.direct, output.manifest.task_counts.self_refine
    );
    Ok(())
}
