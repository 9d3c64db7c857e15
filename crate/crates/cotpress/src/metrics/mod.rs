//! Evaluation metrics: token counting, accuracy, perplexity, latency,
//! and token efficiency.

mod answer;

pub use answer::{extract_boxed_answer, normalize_answer};

use crate::par;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("endpoint-reported token count requested but none is available")]
    ReportedCountUnavailable,
    #[error("cannot compute accuracy over an empty record list")]
    EmptyRecords,
    #[error("token efficiency undefined for mean token count {0}")]
    ZeroMeanTokens(f64),
    #[error("perplexity undefined for an empty logprob sequence")]
    EmptyLogprobs,
    #[error("logprob {0} is positive; log-probabilities must be <= 0")]
    PositiveLogprob(f64),
    #[error("unknown token scheme {0:?}")]
    UnknownScheme(String),
}

/// How chain-of-thought length is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TokenScheme {
    /// Maximal runs of non-whitespace characters.
    Whitespace,
    /// Word segments plus standalone punctuation under UAX #29 word
    /// segmentation. Deterministic and tokenizer-free; the default.
    #[default]
    UnicodeWord,
    /// Pass through the count the serving endpoint reported.
    EndpointReported,
}

impl fmt::Display for TokenScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenScheme::Whitespace => "whitespace",
            TokenScheme::UnicodeWord => "unicode-word",
            TokenScheme::EndpointReported => "endpoint-reported",
        };
        f.write_str(s)
    }
}

impl FromStr for TokenScheme {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(TokenScheme::Whitespace),
            "unicode-word" => Ok(TokenScheme::UnicodeWord),
            "endpoint-reported" => Ok(TokenScheme::EndpointReported),
            other => Err(MetricsError::UnknownScheme(other.to_string())),
        }
    }
}

/// Counts tokens in `text` under `scheme`.
///
/// `EndpointReported` cannot be computed from text alone; use
/// [`token_count_for`] when a reported count may be present.
pub fn count_tokens(text: &str, scheme: TokenScheme) -> Result<usize, MetricsError> {
    match scheme {
        TokenScheme::Whitespace => Ok(text.split_whitespace().count()),
        TokenScheme::UnicodeWord => Ok(text
            .split_word_bounds()
            .filter(|seg| !seg.chars().all(char::is_whitespace))
            .count()),
        TokenScheme::EndpointReported => Err(MetricsError::ReportedCountUnavailable),
    }
}

/// Resolves a token count from text plus an optional endpoint-reported count.
pub fn token_count_for(
    text: &str,
    reported: Option<usize>,
    scheme: TokenScheme,
) -> Result<usize, MetricsError> {
    match scheme {
        TokenScheme::EndpointReported => reported.ok_or(MetricsError::ReportedCountUnavailable),
        other => count_tokens(text, other),
    }
}

/// Whether a predicted answer matches gold under [`normalize_answer`].
/// A missing prediction never matches.
pub fn answer_matches(predicted: Option<&str>, gold: &str) -> bool {
    match predicted {
        Some(p) => normalize_answer(p) == normalize_answer(gold),
        None => false,
    }
}

/// Fraction of records whose predicted answer matches gold.
pub fn accuracy(records: &[(Option<String>, String)]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let matches = par::map_ordered(records, |(pred, gold)| {
        answer_matches(pred.as_deref(), gold) as usize
    });
    Ok(matches.iter().sum::<usize>() as f64 / records.len() as f64)
}

/// Single-threaded twin of [`accuracy`].
pub fn accuracy_seq(records: &[(Option<String>, String)]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let hits = records
        .iter()
        .filter(|(pred, gold)| answer_matches(pred.as_deref(), gold))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Accuracy-per-token composite: `acc_percent / mean_tokens * 100`.
pub fn token_efficiency(acc_percent: f64, mean_tokens: f64) -> Result<f64, MetricsError> {
    if mean_tokens <= 0.0 {
        return Err(MetricsError::ZeroMeanTokens(mean_tokens));
    }
    Ok(acc_percent / mean_tokens * 100.0)
}

/// Perplexity of a text from its per-token natural-log probabilities:
/// `exp(-mean(logprobs))`.
pub fn perplexity(logprobs: &[f64]) -> Result<f64, MetricsError> {
    if logprobs.is_empty() {
        return Err(MetricsError::EmptyLogprobs);
    }
    let mut sum = 0.0;
    for &lp in logprobs {
        if lp > 0.0 {
            return Err(MetricsError::PositiveLogprob(lp));
        }
        sum += lp;
    }
    Ok((-sum / logprobs.len() as f64).exp())
}

/// Aggregate evaluation result over one generation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Fraction of correctly answered questions, in [0, 1].
    pub accuracy: f64,
    pub mean_tokens: f64,
    pub mean_latency_s: f64,
    pub token_efficiency: f64,
}

impl EvalSummary {
    /// Builds a summary from per-record measurements.
    pub fn compute(
        records: &[(Option<String>, String)],
        token_counts: &[usize],
        latencies_s: &[f64],
    ) -> Result<Self, MetricsError> {
        let accuracy = accuracy(records)?;
        let mean_tokens =
            token_counts.iter().sum::<usize>() as f64 / token_counts.len().max(1) as f64;
        let mean_latency_s = if latencies_s.is_empty() {
            0.0
        } else {
            latencies_s.iter().sum::<f64>() / latencies_s.len() as f64
        };
        let te = token_efficiency(accuracy * 100.0, mean_tokens)?;
        Ok(Self { accuracy, mean_tokens, mean_latency_s, token_efficiency: te })
    }

    pub fn csv_header() -> &'static str {
        "accuracy,mean_tokens,mean_latency_s,token_efficiency"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.accuracy, self.mean_tokens, self.mean_latency_s, self.token_efficiency
        )
    }
}
