//! Shared domain types for the compression pipeline.
//!
//! Everything here is a plain immutable value: no I/O, no model backends.
//! The canonical on-disk form of each type is one JSON object per line
//! (see [`crate::jsonl`]), with field names exactly as declared.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

/// A single task input: one problem to reason about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    /// Stable identifier, unique within a dataset.
    pub id: String,
    /// The problem statement. Must be non-empty.
    pub text: String,
    /// Normalized reference answer, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_answer: None,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold_answer = Some(gold.into());
        self
    }

    /// Checks the type-level invariant (non-empty text).
    pub fn validate(&self) -> Result<(), String> {
        if self.text.is_empty() {
            return Err(format!("question {}: empty text", self.id));
        }
        Ok(())
    }
}

/// Verifies that every question id occurs at most once.
pub fn check_unique_ids(questions: &[Question]) -> Result<(), Vec<String>> {
    let mut seen = HashSet::new();
    let mut dups = Vec::new();
    for q in questions {
        if !seen.insert(q.id.as_str()) {
            dups.push(q.id.clone());
        }
    }
    if dups.is_empty() {
        Ok(())
    } else {
        Err(dups)
    }
}

/// One chain-of-thought text together with its measured size and
/// optional scoring metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    /// The chain-of-thought text; may embed a final boxed answer.
    pub text: String,
    /// Token count of `text` under the configured counting scheme.
    pub token_count: usize,
    /// Answer extracted from `text`, when one was found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Per-token natural-log probabilities, each <= 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    /// Wall-clock seconds spent producing the text, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_s: Option<f64>,
}

impl ReasoningTrace {
    pub fn new(text: impl Into<String>, token_count: usize) -> Self {
        Self {
            text: text.into(),
            token_count,
            answer: None,
            logprobs: None,
            latency_s: None,
        }
    }
}

/// Why a trajectory stopped producing further rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppedReason {
    /// The round budget was exhausted without a length rebound.
    MaxRounds,
    /// A round came back strictly longer than its predecessor.
    LengthRebound,
}

impl fmt::Display for StoppedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppedReason::MaxRounds => write!(f, "max_rounds"),
            StoppedReason::LengthRebound => write!(f, "length_rebound"),
        }
    }
}

/// The full multi-round compression history for one question.
///
/// `rounds[0]` is the original trace. A trailing rebound round, if any,
/// is kept for auditing but is never selectable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionTrajectory {
    pub question: Question,
    /// Ordered round traces; index 0 is the uncompressed original.
    pub rounds: Vec<ReasoningTrace>,
    /// Per-round compression rates: `rounds[i].token_count / rounds[0].token_count`.
    pub rates: Vec<f64>,
    /// Index of the selected trace r*.
    pub selected_index: usize,
    pub stopped_reason: StoppedReason,
}

impl CompressionTrajectory {
    /// The selected trace r*.
    pub fn selected(&self) -> &ReasoningTrace {
        &self.rounds[self.selected_index]
    }
}

/// A violated [`CompressionTrajectory`] invariant. Violations are data,
/// not faults: validation never fails, it reports.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyRounds,
    RateCountMismatch { rates: usize, rounds: usize },
    RateMismatch { index: usize, stored: f64, computed: f64 },
    SelectedOutOfRange { selected: usize, rounds: usize },
    SelectedLongerThanOriginal { selected_tokens: usize, original_tokens: usize },
    NonMonotonePrefix { index: usize, tokens: usize, prev_tokens: usize },
    PositiveLogprob { round: usize, value: f64 },
    NegativeLatency { round: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyRounds => write!(f, "trajectory has no rounds"),
            Violation::RateCountMismatch { rates, rounds } => {
                write!(f, "rate count {rates} does not match round count {rounds}")
            }
            Violation::RateMismatch { index, stored, computed } => write!(
                f,
                "rate mismatch at round {index}: stored {stored}, token ratio {computed}"
            ),
            Violation::SelectedOutOfRange { selected, rounds } => {
                write!(f, "selected index {selected} out of range for {rounds} rounds")
            }
            Violation::SelectedLongerThanOriginal { selected_tokens, original_tokens } => write!(
                f,
                "selected trace has {selected_tokens} tokens, more than the original {original_tokens}"
            ),
            Violation::NonMonotonePrefix { index, tokens, prev_tokens } => write!(
                f,
                "round {index} has {tokens} tokens, more than predecessor {prev_tokens} inside the selected prefix"
            ),
            Violation::PositiveLogprob { round, value } => {
                write!(f, "round {round} carries positive logprob {value}")
            }
            Violation::NegativeLatency { round, value } => {
                write!(f, "round {round} carries negative latency {value}")
            }
        }
    }
}

/// Reports every violated invariant of a trajectory. An empty list means ok.
///
/// Checkable without any model backend; token counts are taken at face
/// value (whether they match a counter is the producer's contract).
pub fn validate_trajectory(t: &CompressionTrajectory) -> Vec<Violation> {
    let mut violations = Vec::new();
    if t.rounds.is_empty() {
        violations.push(Violation::EmptyRounds);
        return violations;
    }
    if t.rates.len() != t.rounds.len() {
        violations.push(Violation::RateCountMismatch {
            rates: t.rates.len(),
            rounds: t.rounds.len(),
        });
    }
    let original = t.rounds[0].token_count;
    if original > 0 {
        for (i, (trace, &rate)) in t.rounds.iter().zip(&t.rates).enumerate() {
            let computed = trace.token_count as f64 / original as f64;
            if computed != rate {
                violations.push(Violation::RateMismatch { index: i, stored: rate, computed });
            }
        }
    }
    if t.selected_index >= t.rounds.len() {
        violations.push(Violation::SelectedOutOfRange {
            selected: t.selected_index,
            rounds: t.rounds.len(),
        });
    } else {
        let selected_tokens = t.rounds[t.selected_index].token_count;
        if selected_tokens > original {
            violations.push(Violation::SelectedLongerThanOriginal {
                selected_tokens,
                original_tokens: original,
            });
        }
        for j in 1..=t.selected_index {
            if t.rounds[j].token_count > t.rounds[j - 1].token_count {
                violations.push(Violation::NonMonotonePrefix {
                    index: j,
                    tokens: t.rounds[j].token_count,
                    prev_tokens: t.rounds[j - 1].token_count,
                });
            }
        }
    }
    for (i, trace) in t.rounds.iter().enumerate() {
        if let Some(lps) = &trace.logprobs {
            if let Some(&bad) = lps.iter().find(|&&lp| lp > 0.0) {
                violations.push(Violation::PositiveLogprob { round: i, value: bad });
            }
        }
        if let Some(lat) = trace.latency_s {
            if lat < 0.0 {
                violations.push(Violation::NegativeLatency { round: i, value: lat });
            }
        }
    }
    violations
}

/// One serialized fine-tuning sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub question_text: String,
    /// Whether the control token is set (compressed-style target).
    pub compressed: bool,
    /// Target chain-of-thought plus answer, verbatim.
    pub target_text: String,
    /// The fully serialized training string.
    pub rendered: String,
}

/// Interpretable per-configuration features with optional fine-tuning targets.
///
/// Targets are absent on rows assembled for prediction; present on rows
/// used for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    /// Mean selected-round compression rate over the training set, in (0, 1].
    pub compression_rate: f64,
    /// Mean perplexity of the selected compressed chains.
    pub compressed_ppl: f64,
    /// Mean original chain length in tokens.
    pub original_len: f64,
    /// Pre-compression accuracy of the target model, as a fraction.
    pub original_acc: f64,
    /// Training-set accuracy of the compressor model, as a fraction.
    pub compressor_acc: f64,
    /// Post-fine-tuning accuracy, as a fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_acc: Option<f64>,
    /// Post-fine-tuning mean chain length in tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_len: Option<f64>,
}

impl FeatureRow {
    /// Feature vector in canonical order.
    pub fn features(&self) -> [f64; 5] {
        [
            self.compression_rate,
            self.compressed_ppl,
            self.original_len,
            self.original_acc,
            self.compressor_acc,
        ]
    }

    /// Canonical feature names, matching [`FeatureRow::features`] order.
    pub const FEATURE_NAMES: [&'static str; 5] = [
        "compression_rate",
        "compressed_ppl",
        "original_len",
        "original_acc",
        "compressor_acc",
    ];

    /// Checks that all present fields are finite and fractions are in [0, 1].
    pub fn validate(&self) -> Result<(), String> {
        let named = [
            ("compression_rate", self.compression_rate),
            ("compressed_ppl", self.compressed_ppl),
            ("original_len", self.original_len),
            ("original_acc", self.original_acc),
            ("compressor_acc", self.compressor_acc),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        for (name, v) in [
            ("original_acc", self.original_acc),
            ("compressor_acc", self.compressor_acc),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if let Some(acc) = self.target_acc {
            if !acc.is_finite() || !(0.0..=1.0).contains(&acc) {
                return Err(format!("target_acc = {acc} outside [0, 1]"));
            }
        }
        if let Some(len) = self.target_len {
            if !len.is_finite() {
                return Err("target_len is not finite".to_string());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(tokens: usize) -> ReasoningTrace {
        ReasoningTrace::new("t ".repeat(tokens).trim_end().to_string(), tokens)
    }

    fn trajectory(lengths: &[usize], selected: usize) -> CompressionTrajectory {
        let rounds: Vec<_> = lengths.iter().map(|&n| trace(n)).collect();
        let rates = lengths
            .iter()
            .map(|&n| n as f64 / lengths[0] as f64)
            .collect();
        CompressionTrajectory {
            question: Question::new("q1", "2+2?"),
            rounds,
            rates,
            selected_index: selected,
            stopped_reason: StoppedReason::MaxRounds,
        }
    }

    #[test]
    fn valid_trajectory_reports_no_violations() {
        let t = trajectory(&[100, 60, 45], 2);
        assert!(validate_trajectory(&t).is_empty());
    }

    #[test]
    fn rate_mismatch_is_reported() {
        let mut t = trajectory(&[100, 60], 1);
        t.rates[1] = 0.9;
        let vs = validate_trajectory(&t);
        assert!(matches!(vs.as_slice(), [Violation::RateMismatch { index: 1, .. }]));
    }

    #[test]
    fn selected_index_out_of_range_is_reported() {
        let mut t = trajectory(&[100, 60, 45], 2);
        t.selected_index = 5;
        let vs = validate_trajectory(&t);
        assert!(vs.contains(&Violation::SelectedOutOfRange { selected: 5, rounds: 3 }));
    }

    #[test]
    fn rebound_inside_prefix_is_reported() {
        // Hand-built: selection points past an interior rebound.
        let mut t = trajectory(&[100, 120, 90], 2);
        t.rates = vec![1.0, 1.2, 0.9];
        let vs = validate_trajectory(&t);
        assert!(vs
            .iter()
            .any(|v| matches!(v, Violation::NonMonotonePrefix { index: 1, .. })));
    }

    #[test]
    fn positive_logprob_is_reported() {
        let mut t = trajectory(&[10], 0);
        t.rounds[0].logprobs = Some(vec![-0.5, 0.25]);
        let vs = validate_trajectory(&t);
        assert!(vs.contains(&Violation::PositiveLogprob { round: 0, value: 0.25 }));
    }

    #[test]
    fn duplicate_ids_detected() {
        let qs = vec![Question::new("a", "x"), Question::new("a", "y")];
        assert_eq!(check_unique_ids(&qs).unwrap_err(), vec!["a".to_string()]);
    }

    #[test]
    fn question_rejects_empty_text() {
        assert!(Question::new("q", "").validate().is_err());
    }
}
