//! Answer extraction and outcome judging for the task evaluator families.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, Gateway, AGENT_TEMPERATURE};
use crate::prompts::render_judge_prompt;

use super::SimError;

pub const NUMERIC_ABS_TOL: f64 = 1e-6;
pub const NUMERIC_REL_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    /// Last number token, absolute tolerance.
    Numeric,
    /// Numeric with LaTeX-lite normalization and relative-or-absolute tolerance.
    NumericTolerant,
    ChoiceLetter,
    Exact,
    /// Semantic comparison by a model judge.
    Judge,
}

impl EvaluatorKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, EvaluatorKind::Numeric | EvaluatorKind::NumericTolerant)
    }
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][-+]?\d+)?|[-+]?\.\d+(?:[eE][-+]?\d+)?")
            .unwrap()
    })
}

fn frac_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\\[dt]?frac\s*\{\s*(-?[\d.,]+)\s*\}\s*\{\s*(-?[\d.,]+)\s*\}").unwrap()
    })
}

fn sci_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*\\(?:times|cdot)\s*10\s*\^\s*\{?\s*(-?\d+)\s*\}?").unwrap())
}

fn boxed_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\\boxed\s*\{((?:[^{}]|\{[^{}]*\})*)\}").unwrap())
}

fn choice_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-J])\)|\b([A-J])\b").unwrap())
}

fn answer_marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer:").unwrap())
}

/// Rewrites the LaTeX constructs that commonly wrap numeric answers into
/// plain numerals: `\boxed{}`, `\frac{a}{b}`, `\times 10^{k}`, `$`, spacing
/// macros, `\%` and degree marks.
pub fn normalize_latex(text: &str) -> String {
    let mut s = match boxed_re().captures_iter(text).last() {
        Some(c) => c[1].to_string(),
        None => text.to_string(),
    };
    s = frac_re()
        .replace_all(&s, |c: &regex::Captures<'_>| {
            let num = c[1].replace(',', "").parse::<f64>();
            let den = c[2].replace(',', "").parse::<f64>();
            match (num, den) {
                (Ok(n), Ok(d)) if d != 0.0 => format!("{}", n / d),
                _ => c[0].to_string(),
            }
        })
        .into_owned();
    s = sci_re().replace_all(&s, "e$1").into_owned();
    for token in ["\\left", "\\right", "\\!", "\\,", "\\;", "\\%", "^\\circ", "^{\\circ}", "$"] {
        s = s.replace(token, "");
    }
    s
}

/// Last number token in `text`, commas stripped.
fn last_number(text: &str) -> Option<String> {
    let m = number_re().find_iter(text).last()?;
    let mut token = m.as_str();
    // a sign glued to a preceding word character is an operator, not a sign
    if token.starts_with(['-', '+']) {
        let prev = text[..m.start()].chars().next_back();
        if prev.is_some_and(|c| c.is_alphanumeric() || c == ')') {
            token = &token[1..];
        }
    }
    Some(token.trim_start_matches('+').replace(',', ""))
}

/// Pulls the answer out of an agent's output for the given evaluator.
pub fn extract_answer(content: &str, kind: EvaluatorKind) -> String {
    match kind {
        EvaluatorKind::Numeric => last_number(content).unwrap_or_default(),
        EvaluatorKind::NumericTolerant => last_number(&normalize_latex(content)).unwrap_or_default(),
        EvaluatorKind::ChoiceLetter => choice_re()
            .captures_iter(content)
            .last()
            .and_then(|c| c.get(1).or_else(|| c.get(2)))
            .map(|m| m.as_str().to_string())
            .unwrap_or_default(),
        EvaluatorKind::Exact | EvaluatorKind::Judge => {
            match answer_marker_re().find_iter(content).last() {
                Some(m) => content[m.end()..].trim().to_string(),
                None => content.trim().to_string(),
            }
        }
    }
}

/// Parses a numeric answer or reference, accepting LaTeX-lite forms.
pub fn parse_number(text: &str) -> Option<f64> {
    let normalized = normalize_latex(text.trim());
    let trimmed = normalized.trim();
    if let Ok(v) = trimmed.replace(',', "").parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    last_number(trimmed)?.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Whether `answer` fails against `reference`. Unparseable numeric answers
/// count as failures.
pub fn numeric_failed(answer: &str, reference: &str, tolerant: bool) -> bool {
    let (Some(a), Some(r)) = (parse_number(answer), parse_number(reference)) else {
        return true;
    };
    let diff = (a - r).abs();
    let ok = diff <= NUMERIC_ABS_TOL || (tolerant && diff <= NUMERIC_REL_TOL * r.abs());
    !ok
}

/// Asks a model judge and maps its final word to an outcome.
pub fn judge_semantic(
    question: &str,
    reference: &str,
    answer: &str,
    gateway: &Gateway,
) -> Result<bool, SimError> {
    let prompt = render_judge_prompt(question, reference, answer);
    let req = gateway.request(vec![ChatMessage::user(prompt)], AGENT_TEMPERATURE);
    let verdict = gateway.complete(&req)?;
    Ok(!verdict_is_correct(&verdict))
}

/// `true` iff the last word of the judge output is "Correct".
pub fn verdict_is_correct(verdict: &str) -> bool {
    verdict
        .split(|c: char| !c.is_alphabetic())
        .rfind(|w| !w.is_empty())
        .is_some_and(|w| w.eq_ignore_ascii_case("correct"))
}
