//! Deterministic replay backend: serves recorded completions keyed by a
//! content hash of the exact prompt bytes.

use super::{ModelEndpoint, Transport, TransportError, TransportReply, TransportRequest};
use crate::jsonl::{self, JsonlError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;

/// SHA-256 hex digest of a prompt (or scored text).
pub fn prompt_sha(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// One recorded exchange. For completions the key is the prompt hash;
/// for scoring it is the hash of the text being scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub prompt_sha: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    pub latency_s: f64,
}

impl FixtureRecord {
    /// Builds a completion fixture, hashing the prompt for the key.
    pub fn for_prompt(prompt: &str, text: impl Into<String>, latency_s: f64) -> Self {
        Self { prompt_sha: prompt_sha(prompt), text: text.into(), logprobs: None, latency_s }
    }

    /// Builds a scoring fixture keyed by the text itself.
    pub fn for_scored_text(text: impl Into<String>, logprobs: Vec<f64>, latency_s: f64) -> Self {
        let text = text.into();
        Self { prompt_sha: prompt_sha(&text), text, logprobs: Some(logprobs), latency_s }
    }

    pub fn with_logprobs(mut self, logprobs: Vec<f64>) -> Self {
        self.logprobs = Some(logprobs);
        self
    }
}

/// Replay-only transport over a fixture store.
pub struct ReplayTransport {
    entries: HashMap<String, FixtureRecord>,
}

impl ReplayTransport {
    pub fn from_records(records: Vec<FixtureRecord>) -> Self {
        let entries = records.into_iter().map(|r| (r.prompt_sha.clone(), r)).collect();
        Self { entries }
    }

    /// Loads a JSONL fixture file.
    pub fn from_path(path: &Path) -> Result<Self, JsonlError> {
        Ok(Self::from_records(jsonl::read_jsonl(path)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Writes fixtures as JSONL, the on-disk replay format.
pub fn write_fixtures(path: &Path, records: &[FixtureRecord]) -> Result<(), JsonlError> {
    jsonl::write_jsonl(path, records)
}

impl Transport for ReplayTransport {
    fn send(
        &self,
        _endpoint: &ModelEndpoint,
        request: &TransportRequest,
    ) -> Result<TransportReply, TransportError> {
        let key = match request {
            TransportRequest::Complete { prompt } => prompt_sha(prompt),
            TransportRequest::Score { text } => prompt_sha(text),
        };
        let record = self
            .entries
            .get(&key)
            .ok_or(TransportError::FixtureMiss { sha: key })?;
        match request {
            TransportRequest::Complete { .. } => Ok(TransportReply {
                text: record.text.clone(),
                logprobs: record.logprobs.clone(),
                latency_s: record.latency_s,
                token_count_reported: None,
            }),
            TransportRequest::Score { .. } => {
                if record.logprobs.is_none() {
                    return Err(TransportError::ScoringUnsupported {
                        detail: format!("fixture {key} has no logprobs"),
                    });
                }
                Ok(TransportReply {
                    text: record.text.clone(),
                    logprobs: record.logprobs.clone(),
                    latency_s: record.latency_s,
                    token_count_reported: None,
                })
            }
        }
    }
}
