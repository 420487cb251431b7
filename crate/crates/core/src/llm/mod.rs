//! LLM gateway: prompt rendering, backends and response parsing.

pub mod http;
pub mod mock;
pub mod parse;
pub mod prompt;

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::domain::{LabelSet, RelationLabel};
use parse::{parse_re_response, ParseError};

pub use http::{HttpBackend, HttpConfig, RetryPolicy};
pub use mock::{mock_generate, BiasModel, Confusion, MockBackend};
pub use prompt::{render_re_prompt, PromptSpec};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("mock backend: {0}")]
    Mock(String),
}

/// Text produced by one backend call, with token usage when the backend reports it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

/// A text-completion backend. Implementations must tolerate concurrent calls.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str, seed: u64) -> Result<Completion, LlmError>;
}

impl<F> LlmBackend for F
where
    F: Fn(&str, u64) -> Result<Completion, LlmError> + Send + Sync,
{
    fn complete(&self, prompt: &str, seed: u64) -> Result<Completion, LlmError> {
        self(prompt, seed)
    }
}

/// Pipeline phase a call or timed event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreInference,
    InitialGeneration,
    Correction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub phase: Phase,
    pub sample_id: Option<String>,
    pub prompt_chars: usize,
    pub response_chars: usize,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub latency: Duration,
    pub ok: bool,
}

/// Append-only record of backend calls and other timed work.
#[derive(Debug, Default)]
pub struct CallLog {
    calls: Mutex<Vec<CallRecord>>,
    spans: Mutex<Vec<(Phase, Duration)>>,
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, record: CallRecord) {
        self.calls.lock().expect("call log poisoned").push(record);
    }

    /// Records non-LLM work (e.g. supervisor training) against a phase.
    pub fn record_span(&self, phase: Phase, elapsed: Duration) {
        self.spans.lock().expect("call log poisoned").push((phase, elapsed));
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn spans(&self) -> Vec<(Phase, Duration)> {
        self.spans.lock().expect("call log poisoned").clone()
    }
}

/// Calls the backend and records the outcome in `log`.
pub fn complete(
    backend: &dyn LlmBackend,
    log: &CallLog,
    phase: Phase,
    sample_id: Option<&str>,
    prompt: &str,
    seed: u64,
) -> Result<String, LlmError> {
    let started = Instant::now();
    let result = backend.complete(prompt, seed);
    let latency = started.elapsed();
    let (response_chars, prompt_tokens, completion_tokens, ok) = match &result {
        Ok(c) => (c.text.len(), c.prompt_tokens, c.completion_tokens, true),
        Err(_) => (0, None, None, false),
    };
    log.record(CallRecord {
        phase,
        sample_id: sample_id.map(str::to_string),
        prompt_chars: prompt.len(),
        response_chars,
        prompt_tokens,
        completion_tokens,
        latency,
        ok,
    });
    result.map(|c| c.text)
}

pub const UNPARSEABLE_RATIONALE: &str = "unparseable response";

/// How a generation's label was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseOutcome {
    Parsed,
    /// The quoted label was unknown; the longest label named on the line was used.
    Recovered,
    /// Nothing usable; the fallback negative label was emitted.
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub rationale: String,
    pub label: RelationLabel,
    pub raw: String,
    pub calls: usize,
    pub outcome: ParseOutcome,
}

/// Derives the seed of a parse retry from the original seed.
pub fn retry_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Generates and interprets one relation prediction.
///
/// A blank, truncated or failed response is regenerated once with the same
/// prompt when `max_calls` allows it. An unknown quoted label falls back to
/// the longest label named on the prediction line, and finally to the label
/// set's fallback label with a placeholder rationale.
#[allow(clippy::too_many_arguments)]
pub fn generate_prediction(
    backend: &dyn LlmBackend,
    log: &CallLog,
    phase: Phase,
    sample_id: Option<&str>,
    prompt: &str,
    labels: &LabelSet,
    seed: u64,
    max_calls: usize,
) -> Generation {
    let mut calls = 0;
    let mut last_raw = String::new();
    while calls < max_calls.max(1) {
        let call_seed = if calls == 0 { seed } else { retry_seed(seed) };
        calls += 1;
        let raw = match complete(backend, log, phase, sample_id, prompt, call_seed) {
            Ok(raw) => raw,
            Err(e) => {
                warn!(sample = sample_id, error = %e, "generation failed");
                if calls >= 2 {
                    break;
                }
                continue;
            }
        };
        match parse_re_response(&raw, labels) {
            Ok(p) => {
                return Generation {
                    rationale: p.rationale,
                    label: p.label,
                    raw,
                    calls,
                    outcome: ParseOutcome::Parsed,
                }
            }
            Err(ParseError::UnknownLabel { rationale, line, .. }) => {
                let (label, outcome) = match labels.longest_mentioned(&line) {
                    Some(l) => (l.clone(), ParseOutcome::Recovered),
                    None => (labels.fallback().clone(), ParseOutcome::Fallback),
                };
                let rationale = if outcome == ParseOutcome::Fallback {
                    UNPARSEABLE_RATIONALE.to_string()
                } else {
                    rationale
                };
                return Generation {
                    rationale,
                    label,
                    raw,
                    calls,
                    outcome,
                };
            }
            Err(e) => {
                warn!(sample = sample_id, error = %e, "unparseable response");
                last_raw = raw;
                if calls >= 2 {
                    break;
                }
            }
        }
    }
    Generation {
        rationale: UNPARSEABLE_RATIONALE.to_string(),
        label: labels.fallback().clone(),
        raw: last_raw,
        calls,
        outcome: ParseOutcome::Fallback,
    }
}
