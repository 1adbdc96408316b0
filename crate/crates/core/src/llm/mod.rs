//! Completion backends: a live HTTP provider and record/replay fixtures.

mod fixture;
mod live;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fixture::{FixtureBackend, FixtureMetadata, FixtureStore, RecordingBackend};
pub use live::{LiveBackend, LiveConfig, RetryPolicy, API_KEY_ENV};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited by provider")]
    RateLimited,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("no fixture recorded for request key {0}")]
    FixtureMiss(String),
    #[error("fixture for request key {0} already holds a different response")]
    FixtureConflict(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("fixture file {path}: {message}")]
    FixtureFile { path: String, message: String },
}

impl BackendError {
    pub(crate) fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::RateLimited | BackendError::Transport(_) => true,
            BackendError::ProviderError { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Model parameters shared by every request of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { model_id: "gpt-4".into(), temperature: 0.0, max_tokens: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_id: &'a str,
    prompt: &'a str,
    temperature: f64,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, params: &ModelParams) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            model_id: params.model_id.clone(),
        }
    }

    /// Lowercase hex SHA-256 over the prompt, model id and temperature.
    pub fn request_key(&self) -> String {
        request_key(&self.prompt, &self.model_id, self.temperature)
    }

    pub(crate) fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

pub fn request_key(prompt: &str, model_id: &str, temperature: f64) -> String {
    let material = serde_json::to_vec(&KeyMaterial { model_id, prompt, temperature })
        .expect("key material serializes");
    hex::encode(Sha256::digest(&material))
}

pub trait CompletionBackend: Send + Sync {
    /// Returns the provider text verbatim.
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// `live:<url>`, `fixture:<path>` or `record:<path>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BackendDescriptor {
    Live { base_url: String },
    Fixture { path: PathBuf },
    Record { path: PathBuf },
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendDescriptor::Live { base_url } => write!(f, "live:{base_url}"),
            BackendDescriptor::Fixture { path } => write!(f, "fixture:{}", path.display()),
            BackendDescriptor::Record { path } => write!(f, "record:{}", path.display()),
        }
    }
}

impl FromStr for BackendDescriptor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("backend descriptor {s:?} must look like live:<url>, fixture:<path> or record:<path>"))?;
        if rest.is_empty() {
            return Err(format!("backend descriptor {s:?} has an empty target"));
        }
        match scheme {
            "live" => Ok(BackendDescriptor::Live { base_url: rest.to_string() }),
            "fixture" => Ok(BackendDescriptor::Fixture { path: rest.into() }),
            "record" => Ok(BackendDescriptor::Record { path: rest.into() }),
            other => Err(format!("unknown backend scheme {other:?}")),
        }
    }
}

impl From<BackendDescriptor> for String {
    fn from(d: BackendDescriptor) -> String {
        d.to_string()
    }
}

impl TryFrom<String> for BackendDescriptor {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl BackendDescriptor {
    /// Instantiates the backend. `live` is used for `live:` (with the
    /// descriptor's URL) and as the upstream of `record:`.
    pub fn open(&self, live: &LiveConfig) -> Result<Box<dyn CompletionBackend>, BackendError> {
        Ok(match self {
            BackendDescriptor::Live { base_url } => {
                let config = LiveConfig { base_url: base_url.clone(), ..live.clone() };
                Box::new(LiveBackend::from_env(config))
            }
            BackendDescriptor::Fixture { path } => Box::new(FixtureBackend::new(FixtureStore::load(path)?)),
            BackendDescriptor::Record { path } => {
                let store = if path.exists() { FixtureStore::load(path)? } else { FixtureStore::default() };
                let upstream = LiveBackend::from_env(live.clone());
                Box::new(RecordingBackend::new(Box::new(upstream), store, path.clone()))
            }
        })
    }
}
