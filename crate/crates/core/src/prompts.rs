//! Versioned prompt assets and their renderers.
//!
//! The evaluation, judge and classifier templates use `str.format`-style
//! placeholders (`{name}` substituted, `{{`/`}}` collapse to braces). The
//! attack templates use bracketed placeholders such as `[ORIGINAL_PROMPT]`.

use crate::taxonomy::ErrorMode;

pub const TEMPLATE_VERSION: &str = "1";

pub const ATTACK_PROMPT_INJECTION: &str = include_str!("../assets/attack_prompt_injection.txt");
pub const ATTACK_RESPONSE_CORRUPTION: &str = include_str!("../assets/attack_response_corruption.txt");
pub const ATTACK_MODES: &str = include_str!("../assets/attack_modes.txt");
pub const EVAL_STANDARD: &str = include_str!("../assets/eval_standard.txt");
pub const EVAL_COT: &str = include_str!("../assets/eval_cot.txt");
pub const JUDGE_SEMANTIC: &str = include_str!("../assets/judge_semantic.txt");
pub const CLASSIFY_MISTAKE_REASON: &str = include_str!("../assets/classify_mistake_reason.txt");

/// Substitutes `{key}` placeholders and collapses doubled braces.
///
/// Unknown single-brace placeholders are left verbatim.
pub fn render_format(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if let Some(inner) = tail.strip_prefix('{') {
            let key = inner.find('}').map(|c| &inner[..c]);
            match key.and_then(|k| vars.iter().find(|(name, _)| *name == k)) {
                Some((name, value)) => {
                    out.push_str(value);
                    rest = &inner[name.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = inner;
                }
            }
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Manipulator instruction block for one mode: its header line followed by
/// the instruction text.
pub fn attack_mode_block(mode: ErrorMode) -> &'static str {
    let prefix = format!("{}: ", mode.code());
    ATTACK_MODES
        .split("\n\n")
        .find(|block| block.starts_with(&prefix))
        .map(|block| block.trim_end_matches('\n'))
        .expect("every mode has an instruction block")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalStyle {
    Standard,
    Cot,
}

impl std::str::FromStr for EvalStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(EvalStyle::Standard),
            "cot" => Ok(EvalStyle::Cot),
            other => Err(format!("unknown style {other:?} (expected standard or cot)")),
        }
    }
}

pub fn render_eval_prompt(style: EvalStyle, conversation_text: &str) -> String {
    let template = match style {
        EvalStyle::Standard => EVAL_STANDARD,
        EvalStyle::Cot => EVAL_COT,
    };
    render_format(template, &[("conversation_text", conversation_text)])
}

pub fn render_judge_prompt(question: &str, correct_answer: &str, model_answer: &str) -> String {
    render_format(
        JUDGE_SEMANTIC,
        &[
            ("question", question),
            ("correct_answer", correct_answer),
            ("model_answer", model_answer),
        ],
    )
}

/// Definition list used in the classifier prompt's `{fm_descriptions}` slot.
pub fn fm_descriptions() -> String {
    ErrorMode::all()
        .map(|m| format!("- {}: **{}** - {}", m.code(), m.title(), m.description()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The asset writes the reason slot as `{{mistake_reason}}`; a literal
/// `str.format` pass would leave it unsubstituted, so the reason is filled
/// into that slot explicitly.
pub fn render_classifier_prompt(mistake_reason: &str) -> String {
    CLASSIFY_MISTAKE_REASON
        .replace("{fm_descriptions}", &fm_descriptions())
        .replace("{{mistake_reason}}", mistake_reason)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_rendering() {
        assert_eq!(render_format("a {x} {{y}} }}", &[("x", "1")]), "a 1 {y} }");
        assert_eq!(render_format("{missing}", &[]), "{missing}");
        assert_eq!(render_format("{x}{x}", &[("x", "{x}")]), "{x}{x}");
    }

    #[test]
    fn eval_prompts_render_json_examples_with_single_braces() {
        let p = render_eval_prompt(EvalStyle::Standard, "[A] hi");
        assert!(p.contains("{\"faulty_agents\": []}"));
        assert!(p.contains("\"\"\"\n[A] hi\n\"\"\""));
        assert!(p.ends_with("## YOUR ANALYSIS (JSON ONLY):\n"));
        let cot = render_eval_prompt(EvalStyle::Cot, "[A] hi");
        assert!(cot.contains("### Step 3: Final Judgment"));
        assert!(cot.ends_with("## YOUR ANALYSIS:\n"));
    }

    #[test]
    fn every_mode_has_attack_block() {
        for mode in ErrorMode::all() {
            let block = attack_mode_block(mode);
            assert!(block.starts_with(mode.code()));
            assert_eq!(block.lines().count(), 2, "{block}");
        }
        assert!(attack_mode_block("FM-1.3".parse().unwrap())
            .contains("TRAP the agent in repetitive task loops"));
    }

    #[test]
    fn judge_and_classifier_prompts() {
        let j = render_judge_prompt("Q?", "Paris", "paris");
        assert!(j.contains("Question: Q?\n\nReference Answer: Paris\n\nModel Answer: paris"));
        assert!(j.contains("**focusing on semantic correctness**"));
        let c = render_classifier_prompt("stopped early {x}");
        assert!(c.contains("MISTAKE_REASON: stopped early {x}\n"));
        assert!(c.contains("- FM-3.3: **Incorrect verification**"));
        assert!(!c.contains("{fm_descriptions}"));
    }
}
