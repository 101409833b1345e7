//! Declarative run configuration: one TOML file drives an experiment.
//!
//! Environment variables are interpolated into the raw file text as
//! `${VAR}` so secrets stay out of committed configs; the persisted copy
//! and the config hash redact the API token.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{DecodeParams, RetryPolicy, SyntheticKernel};
use crate::prompt::{Problem, DEFAULT_PER_CANDIDATE_BUDGET};
use crate::strategies::StrategyKind;
use crate::util::sha256_hex;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkFormat {
    /// Plain problems: one JSON object per line with id/statement/
    /// ground_truth.
    #[default]
    Problems,
    /// Knights-and-knaves puzzles, reformatted into multiple-choice
    /// problems at load time.
    KnightsKnaves,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    /// JSONL file of problems (one per line: id/statement/ground_truth).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<PathBuf>,
    /// Bundled reference benchmark to synthesize problems from instead of
    /// reading a file (offline studies).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub format: BenchmarkFormat,
    /// Seed for format adapters that randomize (distractor sampling).
    #[serde(default)]
    pub adapter_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    Http {
        base_url: String,
        model: String,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        api_token: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default)]
        request_logprobs: bool,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    /// Replays responses from a JSONL file (one JSON string per line).
    Scripted { script_path: PathBuf },
    Synthetic {
        #[serde(skip_serializing_if = "Option::is_none", default)]
        kernel: Option<SyntheticKernel>,
        /// Calibrate the kernel from a bundled reference benchmark.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        calibrate_from: Option<String>,
    },
}

fn default_timeout_secs() -> u64 {
    600
}

fn default_budget() -> usize {
    DEFAULT_PER_CANDIDATE_BUDGET
}

fn default_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub benchmarks: Vec<BenchmarkSpec>,
    pub k: usize,
    pub trials: u32,
    pub strategies: Vec<StrategyKind>,
    pub backend: BackendChoice,
    pub candidate_decode: DecodeParams,
    pub refine_decode: DecodeParams,
    #[serde(default = "default_budget")]
    pub per_candidate_budget: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, HarnessError> {
        let interpolated = interpolate_env(raw)?;
        let config: RunConfig = toml::from_str(&interpolated)
            .map_err(|e| HarnessError::Config(format!("parse config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.benchmarks.is_empty() {
            return Err(HarnessError::Config("no benchmarks configured".into()));
        }
        if self.k < 1 {
            return Err(HarnessError::Config("k must be >= 1".into()));
        }
        if self.trials < 1 {
            return Err(HarnessError::Config("trials must be >= 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(HarnessError::Config("no strategies configured".into()));
        }
        if self.strategies.contains(&StrategyKind::Hierarchical) {
            return Err(HarnessError::Config(
                "hierarchical refinement is a library/simulate operation, not a per-group run \
                 strategy; drop it from [strategies]"
                    .into(),
            ));
        }
        for b in &self.benchmarks {
            if b.path.is_none() && b.builtin.is_none() {
                return Err(HarnessError::Config(format!(
                    "benchmark {} needs a path or a builtin reference",
                    b.name
                )));
            }
        }
        Ok(())
    }

    /// Copy with secrets blanked, used for persistence and hashing.
    pub fn redacted(&self) -> Self {
        let mut copy = self.clone();
        if let BackendChoice::Http { api_token, .. } = &mut copy.backend {
            if api_token.is_some() {
                *api_token = Some("<redacted>".into());
            }
        }
        copy
    }

    /// Stable digest of the redacted config; a resume refuses to continue
    /// when it changed.
    pub fn config_hash(&self) -> String {
        let canonical =
            serde_json::to_string(&self.redacted()).expect("config serializes to JSON");
        sha256_hex(canonical.as_bytes())
    }

    /// Loads the problems for one benchmark spec.
    pub fn load_problems(spec: &BenchmarkSpec) -> Result<Vec<Problem>, HarnessError> {
        if let Some(builtin) = &spec.builtin {
            let bench = crate::reference::benchmark(builtin).ok_or_else(|| {
                HarnessError::Config(format!("unknown builtin benchmark {builtin}"))
            })?;
            return Ok(bench.study_problems());
        }
        let path = spec.path.as_ref().expect("validated");
        let raw = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
        let mut problems = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (number, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let problem: Problem = match spec.format {
                BenchmarkFormat::Problems => serde_json::from_str(line).map_err(|e| {
                    HarnessError::Config(format!("{}:{}: {e}", path.display(), number + 1))
                })?,
                BenchmarkFormat::KnightsKnaves => {
                    let record: crate::adapters::KnightsKnavesRecord = serde_json::from_str(line)
                        .map_err(|e| {
                            HarnessError::Config(format!("{}:{}: {e}", path.display(), number + 1))
                        })?;
                    crate::adapters::knights_knaves_to_multiple_choice(&record, spec.adapter_seed)
                        .map_err(|e| HarnessError::Config(e.to_string()))?
                }
            };
            if problem.statement.is_empty() {
                return Err(HarnessError::Config(format!(
                    "{}:{}: empty statement",
                    path.display(),
                    number + 1
                )));
            }
            if !seen.insert(problem.id.clone()) {
                return Err(HarnessError::Config(format!(
                    "duplicate problem id {} in {}",
                    problem.id,
                    path.display()
                )));
            }
            problems.push(problem);
        }
        if problems.is_empty() {
            return Err(HarnessError::Config(format!("{} has no problems", path.display())));
        }
        Ok(problems)
    }
}

/// Replaces `${VAR}` with the value of the environment variable `VAR`.
/// An unset variable is an error; configs must not run half-resolved.
pub fn interpolate_env(raw: &str) -> Result<String, HarnessError> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find('}') else {
            return Err(HarnessError::Config("unterminated ${ in config".into()));
        };
        let name = &after[..end];
        if name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
            return Err(HarnessError::Config(format!("invalid env reference ${{{name}}}")));
        }
        let value = std::env::var(name)
            .map_err(|_| HarnessError::Config(format!("environment variable {name} is not set")))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Sidecar metadata persisted next to the log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub created_unix_ms: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
k = 4
trials = 2
strategies = ["pass1", "majority", "self_refine", "passk_oracle"]
seed = 7
output_dir = "/tmp/out"

[[benchmarks]]
name = "aime24"
builtin = "aime24"

[backend]
kind = "synthetic"
calibrate_from = "aime24"

[candidate_decode]
max_new_tokens = 32768
temperature = 0.6
top_p = 0.95

[refine_decode]
max_new_tokens = 32768
temperature = 0.6
top_p = 0.95
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(config.per_candidate_budget, DEFAULT_PER_CANDIDATE_BUDGET);
        assert_eq!(config.max_in_flight, 8);
        assert_eq!(config.strategies.len(), 4);
    }

    #[test]
    fn env_interpolation_resolves_and_rejects_unset() {
        std::env::set_var("GSR_TEST_TOKEN", "secret-token");
        let raw = "token = \"${GSR_TEST_TOKEN}\"";
        assert_eq!(interpolate_env(raw).unwrap(), "token = \"secret-token\"");
        assert!(interpolate_env("x = \"${GSR_DEFINITELY_UNSET_VAR}\"").is_err());
        assert!(interpolate_env("x = \"${bad name}\"").is_err());
    }

    #[test]
    fn hash_ignores_api_token_value() {
        let with_token = |token: &str| {
            let mut config = RunConfig::parse(MINIMAL).unwrap();
            config.backend = BackendChoice::Http {
                base_url: "http://localhost".into(),
                model: "m".into(),
                api_token: Some(token.into()),
                retry: RetryPolicy::default(),
                request_logprobs: false,
                timeout_secs: 5,
            };
            config.config_hash()
        };
        assert_eq!(with_token("a"), with_token("b"));
    }

    #[test]
    fn validation_rejects_degenerate_configs() {
        let mut config = RunConfig::parse(MINIMAL).unwrap();
        config.trials = 0;
        assert!(config.validate().is_err());
        let mut config = RunConfig::parse(MINIMAL).unwrap();
        config.strategies.clear();
        assert!(config.validate().is_err());
        let mut config = RunConfig::parse(MINIMAL).unwrap();
        config.benchmarks[0].builtin = None;
        assert!(config.validate().is_err());
    }

    #[test]
    fn knights_knaves_format_is_preprocessed_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kk.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"kk-0","quiz":"Ava says: Ben is a knave. Ben says: we are both knights.","names":["Ava","Ben"],"solution":[true,false]}"#,
                "\n",
                r#"{"id":"kk-1","quiz":"Cal says: I am a knight.","names":["Cal","Dee"],"solution":[true,true]}"#,
                "\n"
            ),
        )
        .unwrap();
        let spec = BenchmarkSpec {
            name: "kk".into(),
            path: Some(path),
            builtin: None,
            format: BenchmarkFormat::KnightsKnaves,
            adapter_seed: 9,
        };
        let problems = RunConfig::load_problems(&spec).unwrap();
        assert_eq!(problems.len(), 2);
        for p in &problems {
            assert!(p.statement.contains("Which of the following assignments is correct?"));
            assert!(["A", "B", "C", "D"].contains(&p.ground_truth.as_deref().unwrap()));
        }
    }

    #[test]
    fn builtin_benchmark_synthesizes_problems() {
        let spec = BenchmarkSpec {
            name: "aime24".into(),
            path: None,
            builtin: Some("aime24".into()),
            format: Default::default(),
            adapter_seed: 0,
        };
        let problems = RunConfig::load_problems(&spec).unwrap();
        assert_eq!(problems.len(), 30);
        assert!(problems.iter().all(|p| p.ground_truth.is_some()));
    }
}
