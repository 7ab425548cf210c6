//! Blocking HTTP transport for chat-completion style endpoints and the small
//! JSON adapters (remote policy, perturber, embeddings).
//!
//! Retries use exponential backoff on connection failures, timeouts, HTTP 429
//! and 5xx. Other 4xx statuses fail immediately.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const URL_ENV: &str = "STOPGATE_LLM_URL";
pub const KEY_ENV: &str = "STOPGATE_LLM_KEY";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("endpoint not configured (set {URL_ENV})")]
    NotConfigured,
    #[error("request to {url} failed after {attempts} attempt(s): {message}")]
    Exhausted {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("endpoint {url} rejected the request with HTTP {status}: {body}")]
    Rejected {
        url: String,
        status: u16,
        body: String,
    },
    #[error("unexpected response from {url}: {message}")]
    BadResponse { url: String, message: String },
}

impl TransportError {
    /// Whether the caller may try the whole operation again later.
    pub fn is_retryable(&self) -> bool {
        matches!(self, TransportError::Exhausted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub url: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: None,
            api_key: None,
            model: "meta-llama/Llama-3.1-8B-Instruct".to_string(),
            temperature: 1.0,
            max_retries: 3,
            backoff_ms: 250,
            timeout_ms: 60_000,
            max_in_flight: 8,
        }
    }
}

impl EndpointConfig {
    /// Defaults with URL and key taken from the environment.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        cfg.apply_env();
        cfg
    }

    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(URL_ENV) {
            if !url.is_empty() {
                self.url = Some(url);
            }
        }
        if let Ok(key) = std::env::var(KEY_ENV) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut p = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *p += 1;
        self.0.cv.notify_one();
    }
}

/// Thread-safe client; share one instance across workers.
#[derive(Debug)]
pub struct HttpClient {
    cfg: EndpointConfig,
    http: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl HttpClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, TransportError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| TransportError::BadResponse {
                url: cfg.url.clone().unwrap_or_default(),
                message: format!("building HTTP client: {e}"),
            })?;
        let in_flight = InFlight::new(cfg.max_in_flight);
        Ok(Self {
            cfg,
            http,
            in_flight,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn url(&self) -> Result<&str, TransportError> {
        self.cfg.url.as_deref().ok_or(TransportError::NotConfigured)
    }

    /// POSTs `body` to the configured URL and decodes the JSON reply.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, TransportError> {
        let url = self.url()?.to_string();
        let value = self.post_value(&url, body)?;
        serde_json::from_value(value).map_err(|e| TransportError::BadResponse {
            url,
            message: e.to_string(),
        })
    }

    fn post_value<B: Serialize>(&self, url: &str, body: &B) -> Result<Value, TransportError> {
        let _permit = self.in_flight.acquire();
        let attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            let mut req = self.http.post(url).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Value>().map_err(|e| TransportError::BadResponse {
                            url: url.to_string(),
                            message: e.to_string(),
                        });
                    }
                    let body = resp.text().unwrap_or_default();
                    if status.as_u16() == 429 || status.is_server_error() {
                        log::warn!("{url}: HTTP {status} on attempt {}", attempt + 1);
                        last = format!("HTTP {status}: {body}");
                        continue;
                    }
                    return Err(TransportError::Rejected {
                        url: url.to_string(),
                        status: status.as_u16(),
                        body,
                    });
                }
                Err(e) => {
                    log::warn!("{url}: {e} on attempt {}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(TransportError::Exhausted {
            url: url.to_string(),
            attempts,
            message: last,
        })
    }

    /// One chat completion; returns the first text block of the reply.
    pub fn chat(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let url = self.url()?.to_string();
        let body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        });
        let value = self.post_value(&url, &body)?;
        first_text_block(&value).ok_or_else(|| TransportError::BadResponse {
            url,
            message: "no text block in reply".into(),
        })
    }
}

/// Extracts the first text block from an OpenAI-style (`choices[0].message`)
/// or content-block style (`content[0].text`) reply.
pub fn first_text_block(v: &Value) -> Option<String> {
    if let Some(s) = v.pointer("/choices/0/message/content").and_then(Value::as_str) {
        return Some(s.to_string());
    }
    if let Some(s) = v.pointer("/choices/0/text").and_then(Value::as_str) {
        return Some(s.to_string());
    }
    match v.get("content") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Array(blocks)) => blocks
            .iter()
            .find(|b| b.get("type").and_then(Value::as_str).unwrap_or("text") == "text")
            .and_then(|b| b.get("text"))
            .and_then(Value::as_str)
            .map(str::to_string),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_block_shapes() {
        let openai = json!({"choices": [{"message": {"role": "assistant", "content": "Yes"}}]});
        assert_eq!(first_text_block(&openai).as_deref(), Some("Yes"));
        let blocks = json!({"content": [{"type": "thinking", "thinking": "hm"}, {"type": "text", "text": "No"}]});
        assert_eq!(first_text_block(&blocks).as_deref(), Some("No"));
        assert_eq!(first_text_block(&json!({"x": 1})), None);
    }

    #[test]
    fn unconfigured_endpoint() {
        let c = HttpClient::new(EndpointConfig::default()).unwrap();
        assert!(matches!(c.chat(&[]), Err(TransportError::NotConfigured)));
    }
}
