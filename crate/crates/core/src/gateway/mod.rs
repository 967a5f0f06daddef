//! Single entry point for model calls.
//!
//! A [`Gateway`] sits in front of one [`Backend`] (HTTP or scripted mock)
//! and an optional [`ReplayCache`]. Cache hits never reach the backend.
//! Every completed call lands exactly once in the gateway's ledger, which
//! feeds cost accounting.

mod cache;
mod cost;
mod http;
mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::templates::estimate_tokens;

pub use cache::{CacheEntry, ReplayCache};
pub use cost::{estimate_cost, CostReport, ModelPrice, PriceTable};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockRule, MockScript};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const CLASSIFICATION_TEMPERATURE: f64 = 0.0;
pub const GENERATION_TEMPERATURE: f64 = 0.3;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    InstructionGen,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub purpose: Purpose,
}

impl LlmRequest {
    /// Request with the default sampling parameters for `purpose`.
    pub fn new(prompt: impl Into<String>, model_id: impl Into<String>, purpose: Purpose) -> Self {
        let temperature = match purpose {
            Purpose::InstructionGen => GENERATION_TEMPERATURE,
            Purpose::Classification => CLASSIFICATION_TEMPERATURE,
        };
        Self {
            prompt: prompt.into(),
            model_id: model_id.into(),
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
            purpose,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::Argument("empty prompt".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Argument(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Argument("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Content digest identifying a request in the replay cache.
///
/// Covers model id, temperature, max tokens and the prompt bytes. Each field
/// is length-prefixed so distinct requests cannot collide by concatenation.
pub fn cache_key(request: &LlmRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"llm-request/v1");
    let model = request.model_id.as_bytes();
    hasher.update((model.len() as u64).to_le_bytes());
    hasher.update(model);
    hasher.update(request.temperature.to_bits().to_le_bytes());
    hasher.update(request.max_tokens.to_le_bytes());
    let prompt = request.prompt.as_bytes();
    hasher.update((prompt.len() as u64).to_le_bytes());
    hasher.update(prompt);
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Set when the backend did not report usage and counts were estimated.
    #[serde(default)]
    pub estimated: bool,
}

impl Usage {
    pub fn estimate(prompt: &str, output: &str) -> Self {
        Self {
            input_tokens: estimate_tokens(prompt),
            output_tokens: estimate_tokens(output),
            estimated: true,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;

    fn add(self, rhs: Usage) -> Usage {
        Usage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
            estimated: self.estimated || rhs.estimated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Replay,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub model_id: String,
    pub usage: Usage,
    pub backend: BackendKind,
    pub latency_ms: u64,
    /// When the completion was first produced; preserved by the replay cache.
    pub created_at: DateTime<Utc>,
}

/// What a backend returns for one successful call.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
    pub created_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CallError {
    /// Rate limits, server errors and transport failures; retried.
    Transient { status: Option<u16>, message: String },
    /// Anything retrying will not fix, such as bad credentials.
    Fatal { status: Option<u16>, message: String },
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, request: &LlmRequest) -> std::result::Result<Completion, CallError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, failed_attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1 << failed_attempt.min(16))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub purpose: Purpose,
    pub model_id: String,
    pub usage: Usage,
    pub backend: BackendKind,
    pub latency_ms: u64,
    pub cache_key: String,
}

struct InFlight {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Option<Box<dyn Backend>>,
    cache: Option<ReplayCache>,
    retry: RetryPolicy,
    in_flight: InFlight,
    ledger: Mutex<Vec<LedgerEntry>>,
    upstream_calls: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.as_ref().map(|b| b.kind()))
            .field("cache", &self.cache)
            .field("retry", &self.retry)
            .field("max_in_flight", &self.in_flight.max)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self::build(Some(Box::new(backend)), None)
    }

    /// Serves only from the cache; a miss is a backend error.
    pub fn replay_only(cache: ReplayCache) -> Self {
        Self::build(None, Some(cache))
    }

    fn build(backend: Option<Box<dyn Backend>>, cache: Option<ReplayCache>) -> Self {
        Self {
            backend,
            cache,
            retry: RetryPolicy::default(),
            in_flight: InFlight::new(DEFAULT_MAX_IN_FLIGHT),
            ledger: Mutex::new(Vec::new()),
            upstream_calls: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ReplayCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.in_flight = InFlight::new(max);
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.in_flight.max
    }

    /// Calls that reached the backend, retries included.
    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    pub fn ledger(&self) -> Vec<LedgerEntry> {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn calls_for(&self, purpose: Purpose) -> usize {
        self.ledger
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .filter(|e| e.purpose == purpose)
            .count()
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        request.validate()?;
        let started = Instant::now();
        let key = cache_key(request);

        if let Some(entry) = self.cache.as_ref().map(|c| c.get(&key)).transpose()?.flatten() {
            let response = LlmResponse {
                text: entry.response.text,
                model_id: request.model_id.clone(),
                usage: entry.response.usage,
                backend: BackendKind::Replay,
                latency_ms: started.elapsed().as_millis() as u64,
                created_at: entry.response.created_at,
            };
            self.record(request, &response, key);
            return Ok(response);
        }

        let Some(backend) = self.backend.as_deref() else {
            return Err(Error::Backend {
                status: None,
                message: format!("replay cache miss for request {key}"),
            });
        };

        let completion = {
            let _permit = self.in_flight.acquire();
            self.call_with_retry(backend, request)?
        };
        let usage = completion
            .usage
            .unwrap_or_else(|| Usage::estimate(&request.prompt, &completion.text));
        let response = LlmResponse {
            text: completion.text,
            model_id: request.model_id.clone(),
            usage,
            backend: backend.kind(),
            latency_ms: started.elapsed().as_millis() as u64,
            created_at: completion.created_at.unwrap_or_else(Utc::now),
        };
        if let Some(cache) = &self.cache {
            cache.put(&key, request, &response)?;
        }
        self.record(request, &response, key);
        Ok(response)
    }

    fn call_with_retry(&self, backend: &dyn Backend, request: &LlmRequest) -> Result<Completion> {
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            self.upstream_calls.fetch_add(1, Ordering::SeqCst);
            match backend.complete(request) {
                Ok(completion) => return Ok(completion),
                Err(CallError::Fatal { status, message }) => {
                    return Err(Error::Backend { status, message })
                }
                Err(CallError::Transient { status, message }) => {
                    log::warn!("attempt {} of {attempts} failed: {message}", attempt + 1);
                    last = Some((status, message));
                    if attempt + 1 < attempts {
                        std::thread::sleep(self.retry.delay(attempt));
                    }
                }
            }
        }
        let (status, message) = last.unwrap_or((None, "no attempts made".into()));
        Err(Error::Backend {
            status,
            message: format!("giving up after {attempts} attempts: {message}"),
        })
    }

    fn record(&self, request: &LlmRequest, response: &LlmResponse, cache_key: String) {
        self.ledger
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(LedgerEntry {
                purpose: request.purpose,
                model_id: request.model_id.clone(),
                usage: response.usage,
                backend: response.backend,
                latency_ms: response.latency_ms,
                cache_key,
            });
    }
}

/// Writes ledger entries as JSONL.
pub fn write_ledger(path: &std::path::Path, entries: &[LedgerEntry]) -> Result<()> {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(entry).map_err(|e| Error::json("ledger entry", e))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_ledger(path: &std::path::Path) -> Result<Vec<LedgerEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(format!("ledger {}", path.display()), e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn request(prompt: &str) -> LlmRequest {
        LlmRequest::new(prompt, "model-a", Purpose::Classification)
    }

    #[test]
    fn cache_key_is_stable_and_parameter_sensitive() {
        let a = request("hello");
        assert_eq!(cache_key(&a), cache_key(&a.clone()));
        assert_eq!(cache_key(&a).len(), 64);
        assert_ne!(cache_key(&a), cache_key(&request("hellp")));
        assert_ne!(cache_key(&a), cache_key(&a.clone().with_temperature(0.7)));
        assert_ne!(cache_key(&a), cache_key(&a.clone().with_max_tokens(10)));
        let mut other_model = a.clone();
        other_model.model_id = "model-b".into();
        assert_ne!(cache_key(&a), cache_key(&other_model));
    }

    #[test]
    fn cache_key_ignores_purpose() {
        let key = cache_key(&request("hello"));
        assert_eq!(key, cache_key(&LlmRequest {
            prompt: "hello".into(),
            model_id: "model-a".into(),
            temperature: 0.0,
            max_tokens: 1024,
            purpose: Purpose::InstructionGen,
        }));
    }

    #[test]
    fn request_validation() {
        let gw = Gateway::new(MockBackend::fixed("x"));
        assert!(gw.complete(&request("")).is_err());
        assert!(gw.complete(&request("p").with_temperature(2.5)).is_err());
        assert!(gw.complete(&request("p").with_max_tokens(0)).is_err());
        assert_eq!(gw.upstream_calls(), 0);
    }

    #[test]
    fn mock_rule_passthrough() {
        let script = MockScript {
            rules: vec![MockRule::contains("rubber tip", "prediction: Correct")],
            fallback: None,
        };
        let gw = Gateway::new(MockBackend::from_script(script));
        let response = gw.complete(&request("the rubber tip cover")).unwrap();
        assert_eq!(response.text, "prediction: Correct");
        assert_eq!(response.backend, BackendKind::Mock);
        assert!(response.usage.estimated);
    }

    #[test]
    fn replay_serves_second_call_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(MockBackend::fixed("prediction: Correct"))
            .with_cache(ReplayCache::open(dir.path()).unwrap());
        let first = gw.complete(&request("same")).unwrap();
        let second = gw.complete(&request("same")).unwrap();
        assert_eq!(gw.upstream_calls(), 1);
        assert_eq!(second.backend, BackendKind::Replay);
        assert_eq!(first.text, second.text);
        assert_eq!(first.usage, second.usage);
        assert_eq!(first.created_at, second.created_at);
        assert_eq!(gw.ledger().len(), 2);

        let offline = Gateway::replay_only(ReplayCache::open(dir.path()).unwrap());
        assert_eq!(offline.complete(&request("same")).unwrap().text, first.text);
        assert!(matches!(offline.complete(&request("other")), Err(Error::Backend { .. })));
    }

    #[test]
    fn transient_errors_retry_then_fail() {
        let backend = MockBackend::from_fn(|_| {
            Err(CallError::Transient { status: Some(429), message: "slow down".into() })
        });
        let gw = Gateway::new(backend).with_retry(RetryPolicy {
            attempts: 3,
            base_delay: Duration::ZERO,
        });
        match gw.complete(&request("p")).unwrap_err() {
            Error::Backend { status, .. } => assert_eq!(status, Some(429)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(gw.upstream_calls(), 3);
        assert!(gw.ledger().is_empty());
    }

    #[test]
    fn retry_success_is_recorded_once() {
        let tries = Arc::new(AtomicU64::new(0));
        let seen = tries.clone();
        let backend = MockBackend::from_fn(move |_| {
            if seen.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(CallError::Transient { status: Some(503), message: "busy".into() })
            } else {
                Ok("ok".into())
            }
        });
        let gw = Gateway::new(backend).with_retry(RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(1),
        });
        assert_eq!(gw.complete(&request("p")).unwrap().text, "ok");
        assert_eq!(gw.upstream_calls(), 2);
        assert_eq!(gw.ledger().len(), 1);
    }

    #[test]
    fn backoff_doubles() {
        let policy = RetryPolicy::default();
        assert_eq!(policy.delay(0), Duration::from_secs(1));
        assert_eq!(policy.delay(1), Duration::from_secs(2));
        assert_eq!(policy.delay(2), Duration::from_secs(4));
    }

    #[test]
    fn ledger_conserves_tokens_under_concurrency() {
        let gw = Arc::new(Gateway::new(MockBackend::fixed("a b c")).with_max_in_flight(4));
        let handles: Vec<_> = (0..16)
            .map(|t| {
                let gw = gw.clone();
                std::thread::spawn(move || {
                    (0..25)
                        .map(|i| gw.complete(&request(&format!("prompt {t} {i}"))).unwrap().usage)
                        .fold(Usage::default(), |a, b| a + b)
                })
            })
            .collect();
        let summed = handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .fold(Usage::default(), |a, b| a + b);
        let ledger = gw.ledger();
        assert_eq!(ledger.len(), 400);
        let from_ledger = ledger.iter().fold(Usage::default(), |a, e| a + e.usage);
        assert_eq!(from_ledger.total(), summed.total());
    }

    #[test]
    fn in_flight_cap_is_respected() {
        let active = Arc::new(AtomicU64::new(0));
        let peak = Arc::new(AtomicU64::new(0));
        let (a, p) = (active.clone(), peak.clone());
        let backend = MockBackend::from_fn(move |_| {
            let now = a.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            a.fetch_sub(1, Ordering::SeqCst);
            Ok("x".into())
        });
        let gw = Arc::new(Gateway::new(backend).with_max_in_flight(3));
        let handles: Vec<_> = (0..12)
            .map(|i| {
                let gw = gw.clone();
                std::thread::spawn(move || gw.complete(&request(&format!("p{i}"))).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn ledger_file_round_trip() {
        let gw = Gateway::new(MockBackend::fixed("x"));
        gw.complete(&request("a")).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_ledger(file.path(), &gw.ledger()).unwrap();
        assert_eq!(read_ledger(file.path()).unwrap(), gw.ledger());
    }
}
