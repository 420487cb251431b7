//! OpenAI-compatible chat-completions backend.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{Completion, LlmBackend, LlmError};

pub const API_KEY_ENV: &str = "SRVF_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(16))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_inflight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo-0613".into(),
            temperature: 1.0,
            max_tokens: 512,
            max_inflight: 8,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
    permits: Permits,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig, api_key: impl Into<String>) -> Result<Self, LlmError> {
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(LlmError::Config("empty API key".into()));
        }
        if config.base_url.trim().is_empty() {
            return Err(LlmError::Config("no endpoint configured".into()));
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        let permits = Permits::new(config.max_inflight);
        Ok(Self {
            config,
            api_key,
            agent,
            permits,
        })
    }

    /// Reads the credential from `SRVF_API_KEY`; fails before any network activity when absent.
    pub fn from_env(config: HttpConfig) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| LlmError::Config(format!("{API_KEY_ENV} is not set")))?;
        Self::new(config, key)
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Result<Completion, Attempt> {
        let response = self
            .agent
            .post(&self.url())
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_json(body.clone());
        match response {
            Ok(resp) => {
                let value: Value = resp
                    .into_json()
                    .map_err(|e| Attempt::Fatal(LlmError::MalformedBody(e.to_string())))?;
                parse_chat_response(&value).map_err(Attempt::Fatal)
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let err = LlmError::Status { status, body };
                if status == 429 || status >= 500 {
                    Err(Attempt::Retry(err))
                } else {
                    Err(Attempt::Fatal(err))
                }
            }
            Err(e) => Err(Attempt::Retry(LlmError::Transport(e.to_string()))),
        }
    }
}

enum Attempt {
    Retry(LlmError),
    Fatal(LlmError),
}

/// Extracts `choices[0].message.content` and token usage.
pub fn parse_chat_response(value: &Value) -> Result<Completion, LlmError> {
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedBody("missing choices[0].message.content".into()))?;
    Ok(Completion {
        text: text.to_string(),
        prompt_tokens: value.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: value.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

impl LlmBackend for HttpBackend {
    /// The seed is not forwarded; hosted sampling is not reproducible anyway.
    fn complete(&self, prompt: &str, _seed: u64) -> Result<Completion, LlmError> {
        let _permit = self.permits.acquire();
        let body = self.request_body(prompt);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(c) => {
                    debug!(attempt, "completion received");
                    return Ok(c);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt < self.config.retry.max_retries => {
                    let wait = self.config.retry.backoff(attempt);
                    warn!(attempt, error = %e, wait_ms = wait.as_millis() as u64, "retrying request");
                    thread::sleep(wait);
                    attempt += 1;
                }
                Err(Attempt::Retry(e)) => return Err(e),
            }
        }
    }
}
