use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendKind, CallError, Completion, LlmRequest, Usage};

pub const SYSTEM_MESSAGE: &str =
    "You are a careful assistant. Follow the output format exactly.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL of a chat-completions API, e.g. `https://host/v1`.
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

/// JSON-over-HTTP chat-completion backend. Sends one system message and one
/// user message carrying the prompt, with bearer-token auth.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.config.base_url)
            .field("api_key", &self.config.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

fn transient(status: Option<u16>, message: impl Into<String>) -> CallError {
    CallError::Transient {
        status,
        message: message.into(),
    }
}

fn parse_usage(body: &Value) -> Option<Usage> {
    let usage = body.get("usage")?;
    let field = |names: &[&str]| names.iter().find_map(|n| usage.get(*n).and_then(Value::as_u64));
    Some(Usage {
        input_tokens: field(&["prompt_tokens", "input_tokens"])?,
        output_tokens: field(&["completion_tokens", "output_tokens"])?,
        estimated: false,
    })
}

fn parse_text(body: &Value) -> Option<String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn complete(&self, request: &LlmRequest) -> Result<Completion, CallError> {
        let payload = json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": request.prompt},
            ],
        });
        let mut call = self.agent.post(&self.endpoint());
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(&payload)
            .map_err(|e| transient(None, format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().unwrap_or_default();
        if status == 429 || status >= 500 {
            return Err(transient(Some(status), format!("HTTP {status}: {body}")));
        }
        if status >= 400 {
            return Err(CallError::Fatal {
                status: Some(status),
                message: format!("HTTP {status}: {body}"),
            });
        }
        let value: Value = serde_json::from_str(&body).map_err(|e| CallError::Fatal {
            status: Some(status),
            message: format!("response is not JSON: {e}"),
        })?;
        let text = parse_text(&value).ok_or_else(|| CallError::Fatal {
            status: Some(status),
            message: "response has no choices[0].message.content".into(),
        })?;
        Ok(Completion {
            text,
            usage: parse_usage(&value),
            created_at: None,
        })
    }
}
