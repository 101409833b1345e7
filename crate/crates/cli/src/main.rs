//! `gsr`: run test-time scaling experiments, resume them, re-emit reports,
//! curate SFT data, and drive synthetic simulations.

mod curate;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use gsr_core::harness::{self, run_phases, PhaseMask, RunConfig, RunOutcome};

#[derive(Parser)]
#[command(
    name = "gsr",
    version,
    about = "Test-time scaling harness: parallel candidate sampling, self-refinement, \
             aggregation strategies, metrics, and SFT data curation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phase 1 only: sample k x trials candidates per problem.
    Sample(RunArgs),
    /// Phase 2 only: build groups from the log and run self-refinement.
    Refine(RunArgs),
    /// Both phases, then report emission.
    Run(RunArgs),
    /// Complete the missing cells of an interrupted run.
    Resume {
        /// Run directory containing config.toml, meta.json and log.jsonl.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Recompute report.md and the CSVs from an existing log.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the SFT data-curation pipeline.
    Curate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Synthetic-backend studies: Monte-Carlo runs, scaling curves, and
    /// reference-table replays.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Authoritative run configuration; the flags below override fields.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_in_flight: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(trials) = self.trials {
            config.trials = trials;
        }
        if let Some(k) = self.k {
            config.k = k;
        }
        if let Some(max_in_flight) = self.max_in_flight {
            config.max_in_flight = max_in_flight;
        }
        config.validate().map_err(anyhow::Error::from)?;
        Ok(config)
    }
}

fn summarize(outcome: &RunOutcome) -> ExitCode {
    println!("run directory: {}", outcome.dir.display());
    for bench in &outcome.report.benchmarks {
        let fmt = |v: Option<i64>| {
            v.map(gsr_core::harness::report::fmt_tenths)
                .unwrap_or_else(|| "-".into())
        };
        println!(
            "{}: pass@1 {}  maj@{} {}  BoN@{} {}  selfRef@{} {}  oracle@{} {}",
            bench.benchmark,
            fmt(bench.pass1_tenths),
            bench.k,
            fmt(bench.majority_tenths),
            bench.k,
            fmt(bench.bon_tenths),
            bench.k,
            fmt(bench.self_refine_tenths),
            bench.k,
            fmt(bench.oracle_tenths),
        );
    }
    if outcome.corrupt_lines > 0 {
        eprintln!("warning: {} corrupt log line(s) skipped", outcome.corrupt_lines);
    }
    if !outcome.gaps.is_empty() {
        eprintln!(
            "incomplete: {} cell(s) missing; resume the run to finish",
            outcome.gaps.len()
        );
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}

async fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    Ok(match cli.command {
        Command::Sample(args) => {
            let config = args.load()?;
            summarize(&run_phases(&config, PhaseMask::sample_only()).await?)
        }
        Command::Refine(args) => {
            let config = args.load()?;
            summarize(&run_phases(&config, PhaseMask::refine_only()).await?)
        }
        Command::Run(args) => {
            let config = args.load()?;
            summarize(&run_phases(&config, PhaseMask::all()).await?)
        }
        Command::Resume { dir } => summarize(&harness::resume_run(&dir).await?),
        Command::Report { dir } => summarize(&harness::report_only(&dir)?),
        Command::Curate { config } => {
            curate::run(&config)?;
            ExitCode::SUCCESS
        }
        Command::Simulate { config } => {
            simulate::run(&config).await?;
            ExitCode::SUCCESS
        }
    })
}

#[tokio::main]
async fn main() -> Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    real_main().await
}
