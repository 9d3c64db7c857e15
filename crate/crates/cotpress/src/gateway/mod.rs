//! Uniform access to generator, compressor, and scorer models.
//!
//! A [`Gateway`] wraps a [`Transport`] (live HTTP or replay fixtures)
//! and owns per-endpoint rate limiting, a concurrency bound, and retry
//! with capped exponential backoff.

mod http;
mod prompts;
mod replay;

pub use http::HttpTransport;
pub use prompts::{render_compression_prompt, render_generation_prompt};
pub use replay::{prompt_sha, FixtureRecord, ReplayTransport};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Decoding parameters forwarded to the model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        // Temperature 0 keeps compression runs reproducible.
        Self { temperature: 0.0, max_tokens: 2048 }
    }
}

/// Configuration for one hosted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    /// Model name as the serving API expects it.
    pub name: String,
    pub base_url: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub decoding: Decoding,
    /// Maximum concurrent requests to this endpoint; at least 1.
    pub max_in_flight: usize,
    pub requests_per_minute: u32,
}

impl ModelEndpoint {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into(),
            auth_env: None,
            decoding: Decoding::default(),
            max_in_flight: 4,
            requests_per_minute: 600,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight < 1 {
            return Err(GatewayError::InvalidEndpoint {
                endpoint: self.name.clone(),
                detail: "max_in_flight must be >= 1".to_string(),
            });
        }
        if self.requests_per_minute < 1 {
            return Err(GatewayError::InvalidEndpoint {
                endpoint: self.name.clone(),
                detail: "requests_per_minute must be >= 1".to_string(),
            });
        }
        Ok(())
    }
}

/// One model response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    pub latency_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count_reported: Option<usize>,
}

/// What a transport is asked to do.
#[derive(Debug, Clone)]
pub enum TransportRequest {
    /// Complete a rendered prompt.
    Complete { prompt: String },
    /// Return one log-probability per token of `text`.
    Score { text: String },
}

/// Raw transport reply before gateway validation.
#[derive(Debug, Clone)]
pub struct TransportReply {
    pub text: String,
    pub logprobs: Option<Vec<f64>>,
    pub latency_s: f64,
    pub token_count_reported: Option<usize>,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("no fixture for prompt hash {sha}")]
    FixtureMiss { sha: String },
    #[error("transport does not support token scoring{}", detail_suffix(.detail))]
    ScoringUnsupported { detail: String },
    #[error("network failure: {detail}")]
    Network { detail: String },
    #[error("HTTP status {code}: {detail}")]
    Status { code: u16, detail: String },
    #[error("malformed response body: {detail}")]
    Malformed { detail: String },
}

fn detail_suffix(detail: &str) -> String {
    if detail.is_empty() {
        String::new()
    } else {
        format!(" ({detail})")
    }
}

impl TransportError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Network { .. } => true,
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// Lowest layer: turns one request into one reply, no policy.
pub trait Transport: Send + Sync {
    fn send(
        &self,
        endpoint: &ModelEndpoint,
        request: &TransportRequest,
    ) -> Result<TransportReply, TransportError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint {endpoint} request {request_id}: {source} (after {attempts} attempt(s))")]
    Transport {
        endpoint: String,
        request_id: String,
        attempts: usize,
        #[source]
        source: TransportError,
    },
    #[error("endpoint {endpoint}: scoring unsupported")]
    ScoringUnsupported { endpoint: String },
    #[error("endpoint {endpoint} request {request_id}: returned positive logprob {value}")]
    InvalidLogprob { endpoint: String, request_id: String, value: f64 },
    #[error("endpoint {endpoint}: {detail}")]
    InvalidEndpoint { endpoint: String, detail: String },
    #[error("auth variable {var} is not set in the environment")]
    MissingAuth { var: String },
}

/// Counting semaphore; capacity fixed at creation.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(capacity: usize) -> Self {
        Self { permits: Mutex::new(capacity), cv: Condvar::new() }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        let mut permits = self.permits.lock().unwrap();
        *permits += 1;
        self.cv.notify_one();
    }
}

/// Sliding-window request pacing plus the in-flight bound for one endpoint.
struct EndpointState {
    semaphore: Semaphore,
    window: Mutex<Vec<Instant>>,
    rpm: u32,
}

impl EndpointState {
    fn new(endpoint: &ModelEndpoint) -> Self {
        Self {
            semaphore: Semaphore::new(endpoint.max_in_flight),
            window: Mutex::new(Vec::new()),
            rpm: endpoint.requests_per_minute,
        }
    }

    /// Blocks until a request slot inside the per-minute budget is free,
    /// then records the send instant.
    fn wait_for_rate_slot(&self) {
        loop {
            let wait = {
                let mut window = self.window.lock().unwrap();
                let now = Instant::now();
                window.retain(|t| now.duration_since(*t) < Duration::from_secs(60));
                if (window.len() as u32) < self.rpm {
                    window.push(now);
                    None
                } else {
                    let oldest = *window.iter().min().unwrap();
                    Some(Duration::from_secs(60).saturating_sub(now.duration_since(oldest)))
                }
            };
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d.min(Duration::from_millis(250)).max(Duration::from_millis(1))),
            }
        }
    }
}

/// Retry/backoff policy. The defaults suit live endpoints; tests shrink them.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff_base: Duration::from_millis(200),
            backoff_cap: Duration::from_secs(2),
        }
    }
}

/// Shared front door to a model backend. Safe to use from many threads;
/// requests above `max_in_flight` block, and transient failures retry
/// with capped exponential backoff.
pub struct Gateway {
    transport: Box<dyn Transport>,
    states: Mutex<HashMap<String, std::sync::Arc<EndpointState>>>,
    retry: RetryPolicy,
    next_request: AtomicU64,
}

impl Gateway {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Self::with_retry(transport, RetryPolicy::default())
    }

    pub fn with_retry(transport: Box<dyn Transport>, retry: RetryPolicy) -> Self {
        Self { transport, states: Mutex::new(HashMap::new()), retry, next_request: AtomicU64::new(1) }
    }

    fn state_for(&self, endpoint: &ModelEndpoint) -> std::sync::Arc<EndpointState> {
        let mut states = self.states.lock().unwrap();
        states
            .entry(endpoint.name.clone())
            .or_insert_with(|| std::sync::Arc::new(EndpointState::new(endpoint)))
            .clone()
    }

    fn next_request_id(&self, endpoint: &ModelEndpoint) -> String {
        let n = self.next_request.fetch_add(1, Ordering::Relaxed);
        format!("{}#{n:06}", endpoint.name)
    }

    fn dispatch(
        &self,
        endpoint: &ModelEndpoint,
        request: &TransportRequest,
        request_id: &str,
    ) -> Result<TransportReply, GatewayError> {
        endpoint.validate()?;
        let state = self.state_for(endpoint);
        state.semaphore.acquire();
        let result = self.dispatch_with_retries(endpoint, request, request_id, &state);
        state.semaphore.release();
        result
    }

    fn dispatch_with_retries(
        &self,
        endpoint: &ModelEndpoint,
        request: &TransportRequest,
        request_id: &str,
        state: &EndpointState,
    ) -> Result<TransportReply, GatewayError> {
        let mut last_err = None;
        for attempt in 1..=self.retry.attempts {
            state.wait_for_rate_slot();
            match self.transport.send(endpoint, request) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    let transient = e.is_transient();
                    last_err = Some((e, attempt));
                    if !transient {
                        break;
                    }
                    if attempt < self.retry.attempts {
                        let exp = self.retry.backoff_base * 2u32.saturating_pow(attempt as u32 - 1);
                        std::thread::sleep(exp.min(self.retry.backoff_cap));
                    }
                }
            }
        }
        let (source, attempts) = last_err.expect("at least one attempt");
        Err(GatewayError::Transport {
            endpoint: endpoint.name.clone(),
            request_id: request_id.to_string(),
            attempts,
            source,
        })
    }

    /// Sends a rendered prompt and returns the model's completion.
    pub fn complete(
        &self,
        endpoint: &ModelEndpoint,
        prompt: &str,
    ) -> Result<Completion, GatewayError> {
        let request_id = self.next_request_id(endpoint);
        let reply = self.dispatch(
            endpoint,
            &TransportRequest::Complete { prompt: prompt.to_string() },
            &request_id,
        )?;
        if let Some(lps) = &reply.logprobs {
            if let Some(&bad) = lps.iter().find(|&&lp| lp > 0.0) {
                return Err(GatewayError::InvalidLogprob {
                    endpoint: endpoint.name.clone(),
                    request_id,
                    value: bad,
                });
            }
        }
        Ok(Completion {
            text: reply.text,
            logprobs: reply.logprobs,
            latency_s: reply.latency_s,
            token_count_reported: reply.token_count_reported,
        })
    }

    /// Scores `text` under the endpoint's model: one logprob per token.
    ///
    /// Empty text scores as an empty sequence without touching the backend.
    pub fn score_logprobs(
        &self,
        endpoint: &ModelEndpoint,
        text: &str,
    ) -> Result<Vec<f64>, GatewayError> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        let request_id = self.next_request_id(endpoint);
        let reply = match self.dispatch(
            endpoint,
            &TransportRequest::Score { text: text.to_string() },
            &request_id,
        ) {
            Ok(r) => r,
            Err(GatewayError::Transport {
                source: TransportError::ScoringUnsupported { .. },
                ..
            }) => {
                return Err(GatewayError::ScoringUnsupported { endpoint: endpoint.name.clone() })
            }
            Err(e) => return Err(e),
        };
        let lps = reply.logprobs.ok_or(GatewayError::ScoringUnsupported {
            endpoint: endpoint.name.clone(),
        })?;
        if let Some(&bad) = lps.iter().find(|&&lp| lp > 0.0) {
            return Err(GatewayError::InvalidLogprob {
                endpoint: endpoint.name.clone(),
                request_id,
                value: bad,
            });
        }
        Ok(lps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicIsize, AtomicUsize};
    use std::sync::Arc;

    fn endpoint(max_in_flight: usize) -> ModelEndpoint {
        let mut ep = ModelEndpoint::new("fake-model", "http://unused");
        ep.max_in_flight = max_in_flight;
        ep
    }

    /// Tracks concurrent calls; replies after a short pause.
    struct CountingTransport {
        current: AtomicIsize,
        peak: AtomicIsize,
        calls: AtomicUsize,
    }

    impl CountingTransport {
        fn new() -> Self {
            Self {
                current: AtomicIsize::new(0),
                peak: AtomicIsize::new(0),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl Transport for CountingTransport {
        fn send(
            &self,
            _endpoint: &ModelEndpoint,
            _request: &TransportRequest,
        ) -> Result<TransportReply, TransportError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            self.calls.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(3));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(TransportReply {
                text: "ok".to_string(),
                logprobs: None,
                latency_s: 0.003,
                token_count_reported: None,
            })
        }
    }

    #[test]
    fn in_flight_requests_never_exceed_limit() {
        let transport = Arc::new(CountingTransport::new());
        struct Shared(Arc<CountingTransport>);
        impl Transport for Shared {
            fn send(
                &self,
                e: &ModelEndpoint,
                r: &TransportRequest,
            ) -> Result<TransportReply, TransportError> {
                self.0.send(e, r)
            }
        }
        let gateway = Arc::new(Gateway::new(Box::new(Shared(transport.clone()))));
        let ep = endpoint(4);
        let mut handles = Vec::new();
        for _ in 0..32 {
            let g = gateway.clone();
            let ep = ep.clone();
            handles.push(std::thread::spawn(move || {
                for _ in 0..3 {
                    g.complete(&ep, "p").unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(transport.calls.load(Ordering::SeqCst), 96);
        assert!(
            transport.peak.load(Ordering::SeqCst) <= 4,
            "peak in-flight {} exceeded limit",
            transport.peak.load(Ordering::SeqCst)
        );
    }

    /// Fails transiently a fixed number of times, then succeeds.
    struct FlakyTransport {
        failures_left: AtomicUsize,
        attempts_seen: AtomicUsize,
    }

    impl Transport for FlakyTransport {
        fn send(
            &self,
            _e: &ModelEndpoint,
            _r: &TransportRequest,
        ) -> Result<TransportReply, TransportError> {
            self.attempts_seen.fetch_add(1, Ordering::SeqCst);
            let left = self.failures_left.load(Ordering::SeqCst);
            if left > 0 {
                self.failures_left.store(left - 1, Ordering::SeqCst);
                return Err(TransportError::Network { detail: "timeout".to_string() });
            }
            Ok(TransportReply {
                text: "recovered".to_string(),
                logprobs: None,
                latency_s: 0.0,
                token_count_reported: None,
            })
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            backoff_base: Duration::from_millis(1),
            backoff_cap: Duration::from_millis(4),
        }
    }

    #[test]
    fn transient_failures_retry_then_succeed() {
        let t = FlakyTransport { failures_left: AtomicUsize::new(2), attempts_seen: AtomicUsize::new(0) };
        let gateway = Gateway::with_retry(Box::new(t), fast_retry());
        let c = gateway.complete(&endpoint(1), "p").unwrap();
        assert_eq!(c.text, "recovered");
    }

    #[test]
    fn three_transient_failures_surface_the_error() {
        let t = FlakyTransport { failures_left: AtomicUsize::new(5), attempts_seen: AtomicUsize::new(0) };
        let gateway = Gateway::with_retry(Box::new(t), fast_retry());
        let err = gateway.complete(&endpoint(1), "p").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fake-model"), "missing endpoint name: {msg}");
        assert!(msg.contains("3 attempt"), "missing attempt count: {msg}");
    }

    struct RejectingTransport;
    impl Transport for RejectingTransport {
        fn send(
            &self,
            _e: &ModelEndpoint,
            _r: &TransportRequest,
        ) -> Result<TransportReply, TransportError> {
            Err(TransportError::Status { code: 404, detail: "no such model".to_string() })
        }
    }

    #[test]
    fn non_transient_errors_do_not_retry() {
        let gateway = Gateway::with_retry(Box::new(RejectingTransport), fast_retry());
        let err = gateway.complete(&endpoint(1), "p").unwrap_err();
        assert!(err.to_string().contains("1 attempt"), "{err}");
    }

    struct PositiveLogprobTransport;
    impl Transport for PositiveLogprobTransport {
        fn send(
            &self,
            _e: &ModelEndpoint,
            _r: &TransportRequest,
        ) -> Result<TransportReply, TransportError> {
            Ok(TransportReply {
                text: "t".to_string(),
                logprobs: Some(vec![-0.1, 0.2]),
                latency_s: 0.0,
                token_count_reported: None,
            })
        }
    }

    #[test]
    fn positive_logprobs_are_rejected() {
        let gateway = Gateway::new(Box::new(PositiveLogprobTransport));
        assert!(matches!(
            gateway.complete(&endpoint(1), "p"),
            Err(GatewayError::InvalidLogprob { .. })
        ));
        assert!(matches!(
            gateway.score_logprobs(&endpoint(1), "text"),
            Err(GatewayError::InvalidLogprob { .. })
        ));
    }

    #[test]
    fn empty_text_scores_empty_without_backend() {
        let gateway = Gateway::new(Box::new(RejectingTransport));
        assert_eq!(gateway.score_logprobs(&endpoint(1), "").unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn zero_in_flight_is_rejected() {
        let gateway = Gateway::new(Box::new(RejectingTransport));
        let err = gateway.complete(&endpoint(0), "p").unwrap_err();
        assert!(err.to_string().contains("max_in_flight"));
    }
}
