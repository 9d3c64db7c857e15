//! Live HTTP transport speaking the common JSON chat-completion protocol.
//!
//! Completions go to `{base_url}/chat/completions` as a single user
//! message. Token scoring uses the legacy `{base_url}/completions`
//! endpoint in echo mode (`max_tokens: 0, echo: true, logprobs: 0`);
//! servers without it surface a scoring-unsupported error.

use super::{ModelEndpoint, Transport, TransportError, TransportReply, TransportRequest};
use serde_json::{json, Value};
use std::time::{Duration, Instant};

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpTransport {
    pub fn new() -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("reqwest client");
        Self { client }
    }

    fn auth_header(endpoint: &ModelEndpoint) -> Result<Option<String>, TransportError> {
        match &endpoint.auth_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(key) => Ok(Some(format!("Bearer {key}"))),
                Err(_) => Err(TransportError::Malformed {
                    detail: format!("auth variable {var} is not set"),
                }),
            },
        }
    }

    fn post(
        &self,
        endpoint: &ModelEndpoint,
        path: &str,
        body: Value,
    ) -> Result<(Value, f64), TransportError> {
        let url = format!("{}/{}", endpoint.base_url.trim_end_matches('/'), path);
        let mut req = self.client.post(&url).json(&body);
        if let Some(auth) = Self::auth_header(endpoint)? {
            req = req.header("Authorization", auth);
        }
        let start = Instant::now();
        let response = req
            .send()
            .map_err(|e| TransportError::Network { detail: e.to_string() })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| TransportError::Network { detail: e.to_string() })?;
        let latency_s = start.elapsed().as_secs_f64();
        if !status.is_success() {
            return Err(TransportError::Status {
                code: status.as_u16(),
                detail: truncate(&text, 200),
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| TransportError::Malformed {
            detail: format!("{e} in body {}", truncate(&text, 200)),
        })?;
        Ok((value, latency_s))
    }

    fn parse_chat(value: &Value, latency_s: f64) -> Result<TransportReply, TransportError> {
        let choice = value
            .pointer("/choices/0")
            .ok_or_else(|| TransportError::Malformed { detail: "missing choices[0]".to_string() })?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| TransportError::Malformed {
                detail: "missing choices[0].message.content".to_string(),
            })?
            .to_string();
        let logprobs = choice.pointer("/logprobs/content").and_then(Value::as_array).map(|items| {
            items
                .iter()
                .filter_map(|item| item.get("logprob").and_then(Value::as_f64))
                .collect::<Vec<f64>>()
        });
        let token_count_reported = value
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .map(|n| n as usize);
        Ok(TransportReply { text, logprobs, latency_s, token_count_reported })
    }

    fn parse_echo_scores(value: &Value, latency_s: f64) -> Result<TransportReply, TransportError> {
        let choice = value
            .pointer("/choices/0")
            .ok_or_else(|| TransportError::Malformed { detail: "missing choices[0]".to_string() })?;
        let text = choice.get("text").and_then(Value::as_str).unwrap_or_default().to_string();
        let token_logprobs = choice
            .pointer("/logprobs/token_logprobs")
            .and_then(Value::as_array)
            .ok_or(TransportError::ScoringUnsupported {
                detail: "no logprobs in completions response".to_string(),
            })?;
        // The first echoed token has no conditional probability; servers
        // send null there.
        let logprobs: Vec<f64> = token_logprobs.iter().filter_map(Value::as_f64).collect();
        Ok(TransportReply { text, logprobs: Some(logprobs), latency_s, token_count_reported: None })
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

impl Transport for HttpTransport {
    fn send(
        &self,
        endpoint: &ModelEndpoint,
        request: &TransportRequest,
    ) -> Result<TransportReply, TransportError> {
        match request {
            TransportRequest::Complete { prompt } => {
                let body = json!({
                    "model": endpoint.name,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": endpoint.decoding.temperature,
                    "max_tokens": endpoint.decoding.max_tokens,
                });
                let (value, latency_s) = self.post(endpoint, "chat/completions", body)?;
                Self::parse_chat(&value, latency_s)
            }
            TransportRequest::Score { text } => {
                let body = json!({
                    "model": endpoint.name,
                    "prompt": text,
                    "max_tokens": 0,
                    "echo": true,
                    "logprobs": 0,
                    "temperature": 0.0,
                });
                let (value, latency_s) = self.post(endpoint, "completions", body)?;
                Self::parse_echo_scores(&value, latency_s)
            }
        }
    }
}
