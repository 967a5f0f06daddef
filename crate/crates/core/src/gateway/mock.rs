use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Backend, BackendKind, CallError, Completion, LlmRequest, Purpose};
use crate::error::{Error, Result};

/// One scripted response. A rule matches when the prompt contains every
/// `all_of` string, none of the `none_of` strings, and the request purpose
/// equals `purpose` if one is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub purpose: Option<Purpose>,
    #[serde(default)]
    pub all_of: Vec<String>,
    #[serde(default)]
    pub none_of: Vec<String>,
    pub response: String,
}

impl MockRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            purpose: None,
            all_of: vec![needle.into()],
            none_of: Vec::new(),
            response: response.into(),
        }
    }

    fn matches(&self, request: &LlmRequest) -> bool {
        self.purpose.is_none_or(|p| p == request.purpose)
            && self.all_of.iter().all(|s| request.prompt.contains(s.as_str()))
            && !self.none_of.iter().any(|s| request.prompt.contains(s.as_str()))
    }
}

/// Ordered rules; the first match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback: Option<String>,
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("mock script: {e}")))
    }

    pub fn respond(&self, request: &LlmRequest) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.matches(request))
            .map(|r| r.response.as_str())
            .or(self.fallback.as_deref())
    }
}

type Responder = dyn Fn(&LlmRequest) -> std::result::Result<String, CallError> + Send + Sync;

/// Offline backend driven by a script or a closure. Responses carry a fixed
/// timestamp so stores built from them are reproducible.
pub struct MockBackend {
    responder: Box<Responder>,
    calls: AtomicU64,
    created_at: DateTime<Utc>,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("calls", &self.calls())
            .finish_non_exhaustive()
    }
}

impl MockBackend {
    pub fn from_fn(
        f: impl Fn(&LlmRequest) -> std::result::Result<String, CallError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            responder: Box::new(f),
            calls: AtomicU64::new(0),
            created_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    pub fn from_script(script: MockScript) -> Self {
        Self::from_fn(move |request| {
            script
                .respond(request)
                .map(str::to_string)
                .ok_or_else(|| CallError::Fatal {
                    status: None,
                    message: "mock script has no rule for this prompt".into(),
                })
        })
    }

    /// Always answers with `text`.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::from_fn(move |_| Ok(text.clone()))
    }

    pub fn with_timestamp(mut self, created_at: DateTime<Utc>) -> Self {
        self.created_at = created_at;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&self, request: &LlmRequest) -> std::result::Result<Completion, CallError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(request).map(|text| Completion {
            text,
            usage: None,
            created_at: Some(self.created_at),
        })
    }
}
