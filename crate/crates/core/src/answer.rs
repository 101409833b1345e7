//! Final-answer extraction and mathematical equivalence.
//!
//! Model outputs declare their final answer inside `\boxed{...}`. This module
//! pulls out the last balanced boxed expression, normalizes it into an exact
//! rational where possible, and decides equivalence against a ground truth.
//!
//! Equivalence is deliberately narrow: exact rationals (integers, decimals,
//! `\frac{a}{b}`, `a/b`) plus a canonical-string fallback for everything
//! else. No symbolic simplification is attempted, so verdicts are
//! deterministic and cheap to audit.

use std::ops::Range;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

/// Exact rational value. i64 components are ample for benchmark answers;
/// anything that would overflow falls back to the symbolic string kind.
pub type Rational = Ratio<i64>;

/// Content of the final boxed expression plus where it came from.
///
/// `source_span` covers the whole `\boxed{...}` occurrence in the original
/// text, so it is always non-empty and in bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnswer {
    pub text: String,
    pub source_span: Range<usize>,
}

impl RawAnswer {
    /// Wraps a bare answer string (e.g. a dataset ground truth) that did not
    /// come out of a larger response.
    pub fn bare(text: impl Into<String>) -> Self {
        let text = text.into();
        let len = text.len().max(1);
        Self {
            text,
            source_span: 0..len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Rational,
    Decimal,
    SymbolicString,
}

/// A normalized answer: canonical text plus an exact numeric value when the
/// surface form parsed as a number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedAnswer {
    pub canonical: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub numeric_value: Option<Rational>,
    pub kind: AnswerKind,
}

impl NormalizedAnswer {
    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, AnswerKind::Rational | AnswerKind::Decimal)
    }

    /// Key under which equivalent answers collide (used for vote counting).
    pub fn class_key(&self) -> String {
        match self.numeric_value {
            Some(v) => format!("num:{}/{}", v.numer(), v.denom()),
            None => format!("sym:{}", self.canonical),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictReason {
    Match,
    Mismatch,
    NoBoxedAnswer,
}

/// Outcome of checking one response against a ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub extracted: Option<RawAnswer>,
    pub reason: VerdictReason,
}

/// Returns the content of the last balanced `\boxed{...}` in `text`.
///
/// Scans every `\boxed{` occurrence, keeps those whose braces balance
/// (nesting allowed), and picks the last one. A trailing box whose braces
/// never close is ignored rather than salvaged, so truncated generations do
/// not get scored on a partial answer.
pub fn extract_boxed(text: &str) -> Option<RawAnswer> {
    const OPEN: &str = "\\boxed{";
    let mut best: Option<RawAnswer> = None;
    for (start, _) in text.match_indices(OPEN) {
        let content_start = start + OPEN.len();
        let mut depth = 1usize;
        let mut close = None;
        for (off, ch) in text[content_start..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(content_start + off);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(close) = close {
            best = Some(RawAnswer {
                text: text[content_start..close].to_string(),
                source_span: start..close + 1,
            });
        }
    }
    best
}

/// Normalizes a raw answer (see [`normalize_text`]).
pub fn normalize_answer(raw: &RawAnswer) -> NormalizedAnswer {
    normalize_text(&raw.text)
}

/// Normalizes an answer string.
///
/// Surrounding whitespace and math delimiters (`$`, `\(`, `\)`) are
/// stripped, internal whitespace is collapsed, and integers, decimals,
/// `\frac{a}{b}` and `a/b` are parsed into exact rationals. Anything else
/// becomes a symbolic string. Normalization is idempotent.
pub fn normalize_text(text: &str) -> NormalizedAnswer {
    let stripped = strip_delimiters(text);
    let collapsed = collapse_whitespace(&stripped);

    if let Some((value, from_decimal)) = parse_numeric(&collapsed) {
        if !from_decimal || value.is_integer() {
            return NormalizedAnswer {
                canonical: render_rational(&value),
                numeric_value: Some(value),
                kind: AnswerKind::Rational,
            };
        }
        if let Some(canonical) = render_decimal(&value) {
            return NormalizedAnswer {
                canonical,
                numeric_value: Some(value),
                kind: AnswerKind::Decimal,
            };
        }
    }

    NormalizedAnswer {
        canonical: collapsed,
        numeric_value: None,
        kind: AnswerKind::SymbolicString,
    }
}

/// Exact equivalence: numeric kinds compare by rational value (decimal vs
/// rational included), symbolic strings by canonical equality. A numeric
/// never equals a symbolic.
pub fn answers_equivalent(a: &NormalizedAnswer, b: &NormalizedAnswer) -> bool {
    match (&a.numeric_value, &b.numeric_value) {
        (Some(x), Some(y)) => x == y,
        (None, None) => a.canonical == b.canonical,
        _ => false,
    }
}

/// Extracts the final boxed answer from `response_text` and compares it to
/// `ground_truth`.
pub fn verify(response_text: &str, ground_truth: &str) -> Verdict {
    match extract_boxed(response_text) {
        None => Verdict {
            correct: false,
            extracted: None,
            reason: VerdictReason::NoBoxedAnswer,
        },
        Some(raw) => {
            let got = normalize_answer(&raw);
            let want = normalize_text(ground_truth);
            let correct = answers_equivalent(&got, &want);
            Verdict {
                correct,
                extracted: Some(raw),
                reason: if correct {
                    VerdictReason::Match
                } else {
                    VerdictReason::Mismatch
                },
            }
        }
    }
}

fn strip_delimiters(text: &str) -> String {
    let mut s = text.trim();
    loop {
        let before = s;
        s = s.trim();
        for prefix in ["$", "\\("] {
            if let Some(rest) = s.strip_prefix(prefix) {
                s = rest;
            }
        }
        for suffix in ["$", "\\)"] {
            if let Some(rest) = s.strip_suffix(suffix) {
                s = rest;
            }
        }
        if s == before {
            break;
        }
    }
    s.trim().to_string()
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Attempts to parse `text` as an exact rational. The bool is true when the
/// surface form was a decimal (affects the reported kind).
fn parse_numeric(text: &str) -> Option<(Rational, bool)> {
    if let Some(v) = parse_integer(text) {
        return Some((Rational::from_integer(v), false));
    }
    if let Some(v) = parse_decimal(text) {
        return Some((v, true));
    }
    if let Some(v) = parse_frac_command(text) {
        return Some((v, false));
    }
    if let Some(v) = parse_slash_fraction(text) {
        return Some((v, false));
    }
    None
}

fn parse_integer(text: &str) -> Option<i64> {
    let body = text.strip_prefix('-').or_else(|| text.strip_prefix('+')).unwrap_or(text);
    if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse::<i64>().ok()
}

fn parse_decimal(text: &str) -> Option<Rational> {
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let (int_part, frac_part) = body.split_once('.')?;
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let int_value: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let frac_value: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
    let scale = 10i64.checked_pow(u32::try_from(frac_part.len()).ok()?)?;
    let numer = int_value.checked_mul(scale)?.checked_add(frac_value)?;
    let value = Rational::new(numer, scale);
    Some(if negative { -value } else { value })
}

fn parse_frac_command(text: &str) -> Option<Rational> {
    let rest = text.strip_prefix("\\frac{")?;
    let close_a = rest.find('}')?;
    let a = parse_integer(&rest[..close_a])?;
    let rest = rest[close_a + 1..].strip_prefix('{')?;
    let close_b = rest.find('}')?;
    let b = parse_integer(&rest[..close_b])?;
    if !rest[close_b + 1..].is_empty() || b == 0 {
        return None;
    }
    Some(Rational::new(a, b))
}

fn parse_slash_fraction(text: &str) -> Option<Rational> {
    let (a, b) = text.split_once('/')?;
    let a = parse_integer(a)?;
    let b = parse_integer(b)?;
    if b == 0 {
        return None;
    }
    Some(Rational::new(a, b))
}

fn render_rational(value: &Rational) -> String {
    if value.is_integer() {
        value.numer().to_string()
    } else {
        format!("{}/{}", value.numer(), value.denom())
    }
}

/// Renders a non-integer rational whose denominator divides a power of ten
/// as a minimal decimal string. Returns None when that is impossible.
fn render_decimal(value: &Rational) -> Option<String> {
    let denom = *value.denom();
    let mut scale = 1i64;
    let mut digits = 0u32;
    while scale % denom != 0 {
        scale = scale.checked_mul(10)?;
        digits += 1;
        if digits > 18 {
            return None;
        }
    }
    let scaled = value.numer().checked_mul(scale / denom)?;
    let sign = if scaled < 0 { "-" } else { "" };
    let magnitude = scaled.unsigned_abs();
    let int_part = magnitude / scale.unsigned_abs();
    let frac_part = magnitude % scale.unsigned_abs();
    Some(format!(
        "{sign}{int_part}.{frac_part:0>width$}",
        width = digits as usize
    ))
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn answer_string() -> impl Strategy<Value = String> {
        prop_oneof![
            // plain integers and decimals
            any::<i32>().prop_map(|n| n.to_string()),
            (any::<i32>(), 1u32..4).prop_map(|(n, d)| format!("{}.{}", n, 10u32.pow(d) / 3)),
            // fractions in both surface forms
            (any::<i16>(), 1i16..200).prop_map(|(a, b)| format!("{a}/{b}")),
            (any::<i16>(), 1i16..200).prop_map(|(a, b)| format!("\\frac{{{a}}}{{{b}}}")),
            // decorated numerics
            any::<i16>().prop_map(|n| format!(" $ {n} $ ")),
            // symbolic content
            "[a-z\\\\{}0-9 ]{0,16}",
        ]
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in answer_string()) {
            let once = normalize_text(&s);
            let twice = normalize_text(&once.canonical);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn equivalence_is_reflexive_and_symmetric(a in answer_string(), b in answer_string()) {
            let na = normalize_text(&a);
            let nb = normalize_text(&b);
            prop_assert!(answers_equivalent(&na, &na));
            prop_assert_eq!(answers_equivalent(&na, &nb), answers_equivalent(&nb, &na));
        }

        #[test]
        fn equivalence_is_transitive_for_rationals(a in any::<i16>(), b in 1i16..500) {
            // Three surface forms of the same rational value.
            let x = normalize_text(&format!("{a}/{b}"));
            let y = normalize_text(&format!("\\frac{{{a}}}{{{b}}}"));
            let z = normalize_text(&format!("{}/{}", i32::from(a) * 2, i32::from(b) * 2));
            prop_assert!(answers_equivalent(&x, &y));
            prop_assert!(answers_equivalent(&y, &z));
            prop_assert!(answers_equivalent(&x, &z));
        }

        #[test]
        fn verify_is_exclusive_across_inequivalent_truths(n in 0i32..5000) {
            let text = format!("steps \\boxed{{{n}}}");
            prop_assert!(verify(&text, &n.to_string()).correct);
            prop_assert!(!verify(&text, &(n + 1).to_string()).correct);
        }
    }
}
