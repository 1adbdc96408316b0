use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, CompletionRequest};
use crate::prompts::TemplateVersions;
use crate::store::write_atomic;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureMetadata {
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub recorded_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_versions: Option<TemplateVersions>,
}

/// Recorded completions keyed by request key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureStore {
    pub metadata: FixtureMetadata,
    pub entries: BTreeMap<String, String>,
}

impl FixtureStore {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file_err = |message: String| BackendError::FixtureFile { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let store: FixtureStore = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        if let Some(bad) = store
            .entries
            .keys()
            .find(|k| k.is_empty() || !k.chars().all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)))
        {
            return Err(file_err(format!("request key {bad:?} is not lowercase hex")));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let mut text = serde_json::to_string_pretty(self).expect("fixture store serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
            .map_err(|e| BackendError::FixtureFile { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Stores `response` under `key`. Re-recording the same text is a no-op;
    /// different text is a conflict unless `force` is set.
    pub fn record(&mut self, key: &str, response: &str, force: bool) -> Result<(), BackendError> {
        match self.entries.get(key) {
            Some(existing) if existing == response => Ok(()),
            Some(_) if !force => Err(BackendError::FixtureConflict(key.to_string())),
            _ => {
                self.entries.insert(key.to_string(), response.to_string());
                Ok(())
            }
        }
    }

    pub fn record_request(
        &mut self,
        request: &CompletionRequest,
        response: &str,
        force: bool,
    ) -> Result<(), BackendError> {
        self.record(&request.request_key(), response, force)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Strict replay: a request without a recording fails with `FixtureMiss`.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    store: FixtureStore,
}

impl FixtureBackend {
    pub fn new(store: FixtureStore) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }
}

impl CompletionBackend for FixtureBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        let key = request.request_key();
        self.store.get(&key).map(str::to_string).ok_or(BackendError::FixtureMiss(key))
    }
}

/// Replays recorded keys and forwards misses upstream, persisting each new
/// response to `path` before returning it.
pub struct RecordingBackend {
    upstream: Box<dyn CompletionBackend>,
    store: Mutex<FixtureStore>,
    path: PathBuf,
    force: bool,
}

impl RecordingBackend {
    pub fn new(upstream: Box<dyn CompletionBackend>, store: FixtureStore, path: PathBuf) -> Self {
        Self { upstream, store: Mutex::new(store), path, force: false }
    }

    pub fn with_force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn snapshot(&self) -> FixtureStore {
        self.store.lock().expect("fixture store lock").clone()
    }
}

impl CompletionBackend for RecordingBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        let key = request.request_key();
        if let Some(hit) = self.store.lock().expect("fixture store lock").get(&key) {
            return Ok(hit.to_string());
        }
        let response = self.upstream.complete(request)?;
        let mut store = self.store.lock().expect("fixture store lock");
        if store.metadata.model_id.is_empty() {
            store.metadata.model_id = request.model_id.clone();
        }
        store.metadata.recorded_at = chrono::Utc::now().to_rfc3339();
        store.record(&key, &response, self.force)?;
        store.save(&self.path)?;
        Ok(response)
    }
}
