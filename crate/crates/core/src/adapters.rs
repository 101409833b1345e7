//! Input preprocessors that turn foreign dataset formats into [`Problem`]s.
//!
//! Knights-and-knaves puzzles ship as a statement plus a truth assignment
//! per person. Free-form grading of such answers is unreliable, so the
//! adapter reformats each puzzle as a multiple-choice question: the correct
//! assignment is hidden among seeded distractors and the ground truth
//! becomes a single option letter.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::prompt::{DomainTag, Problem};
use crate::util::derive_seed;

/// One raw logic puzzle: who is a knight (truth-teller) and who is a knave.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnightsKnavesRecord {
    pub id: String,
    /// The puzzle text, e.g. the statements each person makes.
    pub quiz: String,
    pub names: Vec<String>,
    /// true = knight, false = knave; one entry per name.
    pub solution: Vec<bool>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AdapterError {
    #[error("record {id}: names and solution lengths differ ({names} vs {solution})")]
    LengthMismatch {
        id: String,
        names: usize,
        solution: usize,
    },
    #[error("record {id}: puzzle needs at least one person")]
    Empty { id: String },
}

const OPTION_LETTERS: [&str; 4] = ["A", "B", "C", "D"];

fn describe(names: &[String], assignment: &[bool]) -> String {
    names
        .iter()
        .zip(assignment)
        .map(|(name, knight)| {
            format!("{name} is a {}", if *knight { "knight" } else { "knave" })
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Reformats one puzzle as a four-option multiple-choice problem. The three
/// distractors are seeded assignment flips, so the conversion is
/// reproducible; the ground truth is the letter of the correct option.
pub fn knights_knaves_to_multiple_choice(
    record: &KnightsKnavesRecord,
    seed: u64,
) -> Result<Problem, AdapterError> {
    if record.names.is_empty() {
        return Err(AdapterError::Empty {
            id: record.id.clone(),
        });
    }
    if record.names.len() != record.solution.len() {
        return Err(AdapterError::LengthMismatch {
            id: record.id.clone(),
            names: record.names.len(),
            solution: record.solution.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["kk", &record.id]));
    let mut options: Vec<Vec<bool>> = vec![record.solution.clone()];
    // Small puzzles may not have enough distinct assignments for four
    // options; use whatever the space allows.
    let space = 1usize
        .checked_shl(record.names.len() as u32)
        .unwrap_or(usize::MAX);
    let target = OPTION_LETTERS.len().min(space);
    let mut attempts = 0;
    while options.len() < target && attempts < 10_000 {
        attempts += 1;
        let mut distractor = record.solution.clone();
        // Flip a nonempty random subset of people.
        let flips = rng.gen_range(1..=distractor.len());
        let mut indices: Vec<usize> = (0..distractor.len()).collect();
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(flips) {
            distractor[i] = !distractor[i];
        }
        if !options.contains(&distractor) {
            options.push(distractor);
        }
    }
    options.shuffle(&mut rng);
    let correct_at = options
        .iter()
        .position(|o| *o == record.solution)
        .expect("correct option present");

    let mut statement = format!(
        "{}\n\nWhich of the following assignments is correct?\n",
        record.quiz.trim_end()
    );
    for (letter, option) in OPTION_LETTERS.iter().zip(&options) {
        statement.push_str(&format!("{letter}) {}\n", describe(&record.names, option)));
    }
    statement.push_str("Answer with the letter of the correct option.");

    Ok(Problem {
        id: record.id.clone(),
        statement,
        ground_truth: Some(OPTION_LETTERS[correct_at].to_string()),
        domain_tag: DomainTag::Logic,
    })
}
