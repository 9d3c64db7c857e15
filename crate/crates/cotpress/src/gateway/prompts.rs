//! Prompt templates for generation and compression.
//!
//! Renderers are pure: identical inputs produce byte-identical output.
//! Substituted text is inserted verbatim (no escaping), so replay
//! fixtures keyed on prompt bytes stay stable.

use crate::model::Question;

/// Instruction that elicits an initial step-by-step chain of thought
/// ending in a boxed answer.
pub fn render_generation_prompt(q: &Question) -> String {
    format!(
        "Please reason step by step, and put your final answer within \\boxed{{}}.\nQUESTION:\n{}\n",
        q.text
    )
}

/// Instruction that asks the compressor to simplify a previous chain of
/// thought. Always ends with "SIMPLIFIED THOUGHT PROCESS:" so the
/// completion continues in place.
pub fn render_compression_prompt(question_text: &str, cot: &str, answer: &str) -> String {
    format!(
        "You have a question now:\nQUESTION:\n{question_text}\nTHOUGHT PROCESS: {cot}\nANSWER:\n{answer}\nNow you need to simplify the THOUGHT PROCESS and retain the key information needed to solve the question.\nAnd do not add additional information that is not included in the original THOUGHT PROCESS.\nSIMPLIFIED THOUGHT PROCESS:"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_prompt_layout() {
        let q = Question::new("q1", "2+2?");
        let p = render_generation_prompt(&q);
        assert!(p.starts_with(
            "Please reason step by step, and put your final answer within \\boxed{}."
        ));
        assert!(p.ends_with("QUESTION:\n2+2?\n"));
    }

    #[test]
    fn generation_prompt_preserves_newlines() {
        let q = Question::new("q1", "line one\nline two");
        let p = render_generation_prompt(&q);
        assert!(p.contains("QUESTION:\nline one\nline two\n"));
    }

    #[test]
    fn compression_prompt_layout() {
        let p = render_compression_prompt("2+2?", "add the numbers", "4");
        assert!(p.contains("You have a question now:\nQUESTION:\n2+2?\n"));
        assert!(p.contains("THOUGHT PROCESS: add the numbers\n"));
        assert!(p.contains("ANSWER:\n4\n"));
        assert!(p.contains("Now you need to simplify the THOUGHT PROCESS"));
        assert!(p.ends_with("SIMPLIFIED THOUGHT PROCESS:"));
    }

    #[test]
    fn compression_prompt_allows_empty_answer_slot() {
        let p = render_compression_prompt("q", "cot", "");
        assert!(p.contains("ANSWER:\n\n"));
        assert!(p.ends_with("SIMPLIFIED THOUGHT PROCESS:"));
    }

    #[test]
    fn compression_prompt_keeps_math_verbatim() {
        let p = render_compression_prompt("q", "totaling $\\boxed{72}$ clips", "72");
        assert!(p.contains("totaling $\\boxed{72}$ clips"));
    }

    #[test]
    fn renderers_are_pure() {
        let q = Question::new("q1", "same input");
        assert_eq!(render_generation_prompt(&q), render_generation_prompt(&q));
        assert_eq!(
            render_compression_prompt("a", "b", "c"),
            render_compression_prompt("a", "b", "c")
        );
    }
}
