//! Append-only JSONL run log: the single source of truth for a run.
//!
//! Each line is one [`RunRecord`]. Any prefix of the file is a valid log, so
//! an interrupted run resumes from whatever made it to disk. Reports are
//! always recomputed from these records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::answer::Verdict;
use crate::backend::GenerationResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Candidate,
    Refinement,
}

/// One persisted request outcome. `(problem_id, trial, phase, sample_index)`
/// is unique within a log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem_id: String,
    pub trial: u32,
    pub phase: Phase,
    pub sample_index: u32,
    pub request_digest: String,
    pub result: GenerationResult,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verdict: Option<Verdict>,
    pub unix_ms: u64,
}

pub type RecordKey = (String, u32, Phase, u32);

impl RunRecord {
    pub fn key(&self) -> RecordKey {
        (self.problem_id.clone(), self.trial, self.phase, self.sample_index)
    }
}

pub fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Serialized appender; one writer per log file, flushed per record so a
/// crash loses at most the line in flight.
pub struct LogWriter {
    writer: BufWriter<File>,
}

impl LogWriter {
    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            writer: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &RunRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record)?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }
}

/// Parsed log plus any lines that failed to parse (line number, message).
#[derive(Debug, Default)]
pub struct LogContents {
    pub records: Vec<RunRecord>,
    pub corrupt_lines: Vec<(usize, String)>,
}

/// Reads a log, keeping every valid line. Corrupt lines (including a
/// partial final line from a crash) are reported, not fatal.
pub fn read_log(path: &Path) -> std::io::Result<LogContents> {
    let mut contents = LogContents::default();
    if !path.exists() {
        return Ok(contents);
    }
    let reader = BufReader::new(File::open(path)?);
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(&line) {
            Ok(record) => contents.records.push(record),
            Err(e) => contents.corrupt_lines.push((number + 1, e.to_string())),
        }
    }
    Ok(contents)
}
