//! Chat-completion client layer.
//!
//! Every model call in the engine goes through an [`LlmClient`], which owns a
//! [`ModelConfig`], a transport [`Backend`] (remote HTTP or the scripted
//! [`MockProvider`]), a retry policy, an in-flight bound and a shared
//! [`UsageLedger`].

mod http;
mod ledger;
mod mock;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use ledger::{ModelUsage, UsageLedger};
pub use mock::{MockEntry, MockProvider, Responder};

/// Temperature used when a config does not specify one.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
/// Completion cap used when a config does not specify one.
pub const DEFAULT_MAX_TOKENS: u32 = 4000;
/// In-flight requests allowed per client.
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ProviderError {
    #[error("credential missing or rejected: {0}")]
    Auth(String),

    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },

    #[error("provider returned status {status:?}: {message}")]
    Provider { status: Option<u16>, message: String },

    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },

    #[error("duplicate mock key {0:?}")]
    DuplicateKey(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

impl ProviderError {
    pub fn name(&self) -> &'static str {
        match self {
            ProviderError::Auth(_) => "AuthError",
            ProviderError::RateLimited { .. } => "RateLimited",
            ProviderError::Provider { .. } => "ProviderError",
            ProviderError::Timeout { .. } => "Timeout",
            ProviderError::DuplicateKey(_) => "DuplicateKey",
            ProviderError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    OpenaiCompatible,
    AnthropicCompatible,
    LocalEndpoint,
    Mock,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::OpenaiCompatible => "openai-compatible",
            ProviderKind::AnthropicCompatible => "anthropic-compatible",
            ProviderKind::LocalEndpoint => "local-endpoint",
            ProviderKind::Mock => "mock",
        })
    }
}

impl std::str::FromStr for ProviderKind {
    type Err = ProviderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "openai-compatible" | "openai" => Ok(ProviderKind::OpenaiCompatible),
            "anthropic-compatible" | "anthropic" => Ok(ProviderKind::AnthropicCompatible),
            "local-endpoint" | "local" => Ok(ProviderKind::LocalEndpoint),
            "mock" => Ok(ProviderKind::Mock),
            other => Err(ProviderError::InvalidConfig(format!("unknown provider {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Teacher,
    Student,
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelRole::Teacher => "teacher",
            ModelRole::Student => "student",
        })
    }
}

/// Connection and generation settings for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub provider_id: ProviderKind,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub api_base: String,
    /// Name of the environment variable holding the credential.
    #[serde(default)]
    pub api_key_ref: String,
    pub role: ModelRole,
    /// Model used for embedding-backed similarity, when the provider has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_model: Option<String>,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

impl ModelConfig {
    pub fn mock(role: ModelRole) -> Self {
        Self {
            provider_id: ProviderKind::Mock,
            model_name: format!("mock-{role}"),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            api_base: String::new(),
            api_key_ref: String::new(),
            role,
            embedding_model: None,
        }
    }

    pub fn openai(model_name: impl Into<String>, role: ModelRole) -> Self {
        Self {
            provider_id: ProviderKind::OpenaiCompatible,
            model_name: model_name.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            api_base: "https://api.openai.com/v1".into(),
            api_key_ref: "OPENAI_API_KEY".into(),
            role,
            embedding_model: None,
        }
    }

    pub fn anthropic(model_name: impl Into<String>, role: ModelRole) -> Self {
        Self {
            provider_id: ProviderKind::AnthropicCompatible,
            model_name: model_name.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            api_base: "https://api.anthropic.com/v1".into(),
            api_key_ref: "ANTHROPIC_API_KEY".into(),
            role,
            embedding_model: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidConfig("max_tokens must be at least 1".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(ProviderError::InvalidConfig("model_name is empty".into()));
        }
        Ok(())
    }

    /// Ledger key; teacher and student are tracked separately even when they
    /// share a model.
    pub fn ledger_key(&self) -> String {
        format!("{}:{}", self.role, self.model_name)
    }
}

/// Per-request generation overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<GenerationOverrides>,
}

impl CompletionRequest {
    pub fn user(text: impl Into<String>) -> Self {
        Self { system_text: None, user_text: text.into(), overrides: None }
    }

    pub fn with_system(mut self, text: impl Into<String>) -> Self {
        self.system_text = Some(text.into());
        self
    }

    pub(crate) fn temperature(&self, config: &ModelConfig) -> f64 {
        self.overrides.as_ref().and_then(|o| o.temperature).unwrap_or(config.temperature)
    }

    pub(crate) fn max_tokens(&self, config: &ModelConfig) -> u32 {
        self.overrides.as_ref().and_then(|o| o.max_tokens).unwrap_or(config.max_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// Failure of a single transport attempt, before retry classification.
#[derive(Debug, Clone, PartialEq)]
pub enum AttemptError {
    /// 429 from the provider.
    RateLimited,
    /// 5xx or a connection failure; worth retrying.
    Transient { status: Option<u16>, message: String },
    Timeout,
    /// Anything that retrying will not fix.
    Fatal(ProviderError),
}

/// A transport capable of serving completion (and optionally embedding) calls.
pub trait Backend: Send + Sync {
    fn send(
        &self,
        config: &ModelConfig,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, AttemptError>;

    fn embed(&self, config: &ModelConfig, text: &str) -> Result<Vec<f64>, AttemptError> {
        let _ = (config, text);
        Err(AttemptError::Fatal(ProviderError::Provider {
            status: None,
            message: "backend has no embedding endpoint".into(),
        }))
    }
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500), factor: 2.0 }
    }
}

impl RetryPolicy {
    /// Upper bound of the sleep before retry number `retry` (0-based).
    pub fn delay_cap(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry as i32))
    }

    fn jittered(&self, retry: u32) -> Duration {
        let cap = self.delay_cap(retry);
        if cap.is_zero() {
            return cap;
        }
        let frac: f64 = rand::rng().random_range(0.0..=1.0);
        cap.mul_f64(frac)
    }
}

/// Counting semaphore bounding in-flight calls per client.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

/// Shareable handle for one configured model.
#[derive(Clone)]
pub struct LlmClient {
    config: ModelConfig,
    backend: Arc<dyn Backend>,
    ledger: Arc<UsageLedger>,
    retry: RetryPolicy,
    parallelism: usize,
    gate: Arc<Gate>,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("config", &self.config)
            .field("retry", &self.retry)
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

impl LlmClient {
    pub fn new(config: ModelConfig, backend: Arc<dyn Backend>, ledger: Arc<UsageLedger>) -> Self {
        Self {
            config,
            backend,
            ledger,
            retry: RetryPolicy::default(),
            parallelism: DEFAULT_PARALLELISM,
            gate: Arc::new(Gate::new(DEFAULT_PARALLELISM)),
        }
    }

    /// Client over the scripted mock.
    pub fn mock(config: ModelConfig, mock: MockProvider, ledger: Arc<UsageLedger>) -> Self {
        Self::new(config, Arc::new(mock), ledger)
    }

    /// Client over a remote HTTP provider. The credential is resolved here, so
    /// a missing environment variable fails before any network traffic.
    pub fn remote(config: ModelConfig, ledger: Arc<UsageLedger>) -> Result<Self, ProviderError> {
        config.validate()?;
        if config.provider_id == ProviderKind::Mock {
            return Err(ProviderError::InvalidConfig(
                "mock configs need a MockProvider, use LlmClient::mock".into(),
            ));
        }
        let key = resolve_credential(&config)?;
        let backend = HttpBackend::new(key)?;
        Ok(Self::new(config, Arc::new(backend), ledger))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self.gate = Arc::new(Gate::new(self.parallelism));
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        if request.user_text.is_empty() {
            return Err(ProviderError::InvalidConfig("user_text is empty".into()));
        }
        let _slot = self.gate.acquire();
        let started = Instant::now();
        let response = self.with_retries(|| self.backend.send(&self.config, request))?;
        let wall_ms = started.elapsed().as_millis() as u64;
        self.ledger.record(
            &self.config.ledger_key(),
            response.prompt_tokens,
            response.completion_tokens,
            wall_ms,
        );
        Ok(response)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let _slot = self.gate.acquire();
        self.with_retries(|| self.backend.embed(&self.config, text))
    }

    fn with_retries<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, AttemptError>,
    ) -> Result<T, ProviderError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = AttemptError::Timeout;
        for n in 0..attempts {
            match attempt() {
                Ok(v) => return Ok(v),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(e) => {
                    tracing::debug!(attempt = n + 1, error = ?e, "transient provider failure");
                    last = e;
                    if n + 1 < attempts {
                        std::thread::sleep(self.retry.jittered(n));
                    }
                }
            }
        }
        Err(match last {
            AttemptError::RateLimited => ProviderError::RateLimited { attempts },
            AttemptError::Timeout => ProviderError::Timeout { attempts },
            AttemptError::Transient { status, message } => ProviderError::Provider { status, message },
            AttemptError::Fatal(e) => e,
        })
    }
}

fn resolve_credential(config: &ModelConfig) -> Result<Option<String>, ProviderError> {
    if config.api_key_ref.is_empty() {
        if config.provider_id == ProviderKind::LocalEndpoint {
            return Ok(None);
        }
        return Err(ProviderError::Auth(format!(
            "{} requires api_key_ref naming a credential variable",
            config.provider_id
        )));
    }
    match std::env::var(&config.api_key_ref) {
        Ok(v) if !v.trim().is_empty() => Ok(Some(v)),
        _ => Err(ProviderError::Auth(format!(
            "environment variable {} is not set",
            config.api_key_ref
        ))),
    }
}

/// Whitespace-token count; the engine's canonical length unit.
pub fn estimate_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}
