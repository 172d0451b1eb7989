//! Language-model gateway.
//!
//! Everything that talks to a model goes through [`ChatBackend`] or
//! [`EmbeddingBackend`]. Two families of implementations exist: the
//! OpenAI-compatible HTTP client in [`http`], and the deterministic
//! [`ScriptedBackend`] / [`FixtureEmbedder`] used by tests and the bundled
//! fixtures.
//!
//! Call sites use the free functions [`complete`] and [`embed`], which
//! validate the request, normalize embedding output and log every call
//! (prompt hash, latency, token usage).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub mod config;
pub mod fixture;
pub mod http;
pub mod retry;
pub mod scripted;

pub use config::BackendConfig;
pub use fixture::FixtureEmbedder;
pub use http::{HttpConfig, OpenAiCompatible};
pub use retry::RetryPolicy;
pub use scripted::{ScriptRule, ScriptedBackend};

pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted rule matches prompt: {prompt}")]
    NoMatch { prompt: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LlmError> },
    #[error("configuration error: {0}")]
    Config(String),
}

impl LlmError {
    /// Timeouts, connection failures, 429 and 5xx are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Timeout | LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(user: impl Into<String>) -> Self {
        Self {
            system: None,
            user: user.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty user prompt".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<Usage>,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: None,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

/// Implementations return one vector per input, in input order.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for &T {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        (**self).embed(texts)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for std::sync::Arc<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        (**self).embed(texts)
    }
}

pub(crate) fn prompt_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

/// Validated, logged chat completion.
pub fn complete(backend: &dyn ChatBackend, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
    req.validate()?;
    let started = Instant::now();
    let result = backend.complete(req);
    let elapsed = started.elapsed();
    let hash = prompt_hash(&req.user);
    match &result {
        Ok(resp) => tracing::debug!(
            prompt = %hash,
            latency_ms = elapsed.as_millis() as u64,
            prompt_tokens = resp.usage.map(|u| u.prompt_tokens),
            completion_tokens = resp.usage.map(|u| u.completion_tokens),
            "chat completion"
        ),
        Err(err) => tracing::warn!(prompt = %hash, latency_ms = elapsed.as_millis() as u64, %err, "chat completion failed"),
    }
    result
}

/// Embeds `texts`, checking shape and rescaling every vector to unit norm.
pub fn embed(backend: &dyn EmbeddingBackend, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
    if texts.is_empty() {
        return Err(LlmError::InvalidRequest("nothing to embed".into()));
    }
    let started = Instant::now();
    let vectors = backend.embed(texts)?;
    tracing::debug!(
        count = texts.len(),
        latency_ms = started.elapsed().as_millis() as u64,
        "embedding batch"
    );
    if vectors.len() != texts.len() {
        return Err(LlmError::BadResponse(format!(
            "{} vectors for {} inputs",
            vectors.len(),
            texts.len()
        )));
    }
    let dim = vectors[0].len();
    vectors
        .into_iter()
        .map(|v| {
            if v.len() != dim {
                return Err(LlmError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            unit_vector(&v).ok_or_else(|| LlmError::BadResponse("zero or non-finite vector".into()))
        })
        .collect()
}

/// Rescales to unit length, accumulating in f64. `None` for zero or
/// non-finite input.
pub fn unit_vector(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    Some(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Cosine of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    dot.clamp(-1.0, 1.0)
}

pub(crate) fn sleep_if_positive(d: Duration) {
    if !d.is_zero() {
        std::thread::sleep(d);
    }
}
