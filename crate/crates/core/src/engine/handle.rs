use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{
    prepare_iteration, DecisionInput, EngineError, FinalConfirmation, Finalization, Session,
};
use super::run::RunOptions;
use crate::domain::{IterationId, StoryId};
use crate::llm::CompletionBackend;
use crate::prompts::PromptSet;
use crate::store::{write_atomic, Clock};

/// Durable sink for session snapshots.
pub trait Persist: Send {
    fn persist(&mut self, session: &Session) -> Result<(), EngineError>;
}

/// Atomically rewrites one JSON session file.
#[derive(Debug, Clone)]
pub struct FileStore {
    path: PathBuf,
}

impl FileStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Persist for FileStore {
    fn persist(&mut self, session: &Session) -> Result<(), EngineError> {
        write_atomic(&self.path, session.to_json().as_bytes())
            .map_err(|e| EngineError::Persist(format!("{}: {e}", self.path.display())))
    }
}

/// Single writer for a session. Every mutation is applied to a copy,
/// persisted, and only then made visible.
pub struct SessionHandle<P: Persist = FileStore> {
    session: Session,
    store: P,
    clock: Arc<dyn Clock>,
}

impl SessionHandle<FileStore> {
    pub fn open(path: &Path, clock: Arc<dyn Clock>) -> Result<Self, EngineError> {
        let session = Session::load(path)?;
        Ok(Self { session, store: FileStore::new(path), clock })
    }
}

impl<P: Persist> SessionHandle<P> {
    /// Wraps an already-persisted session.
    pub fn attach(session: Session, store: P, clock: Arc<dyn Clock>) -> Self {
        Self { session, store, clock }
    }

    /// Persists a new session and returns its handle.
    pub fn create(session: Session, mut store: P, clock: Arc<dyn Clock>) -> Result<Self, EngineError> {
        store.persist(&session)?;
        Ok(Self { session, store, clock })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    fn commit<T>(&mut self, mutate: impl FnOnce(&mut Session) -> Result<T, EngineError>) -> Result<T, EngineError> {
        let mut next = self.session.clone();
        let out = mutate(&mut next)?;
        self.store.persist(&next)?;
        self.session = next;
        Ok(out)
    }

    pub fn add_story(&mut self, text: &str) -> Result<StoryId, EngineError> {
        let at = self.clock.now();
        self.commit(|s| s.add_story(text, at))
    }

    pub fn update_config(&mut self, update: impl FnOnce(&mut super::SessionConfig)) -> Result<(), EngineError> {
        self.commit(|s| {
            update(&mut s.config);
            s.config.validate()
        })
    }

    /// Runs one iteration for `story_id` and persists it before returning.
    ///
    /// A backend or parse failure leaves the session unchanged apart from a
    /// failed-attempt record.
    pub fn run_iteration(
        &mut self,
        story_id: &StoryId,
        prompts: &PromptSet,
        backend: &dyn CompletionBackend,
        options: RunOptions,
    ) -> Result<IterationId, EngineError> {
        let prepared = prepare_iteration(&self.session, story_id, prompts, backend, options);
        self.commit_prepared(story_id, prepared)
    }

    fn commit_prepared(
        &mut self,
        story_id: &StoryId,
        prepared: Result<super::PreparedIteration, EngineError>,
    ) -> Result<IterationId, EngineError> {
        let at = self.clock.now();
        let result = prepared.and_then(|p| {
            let mut next = self.session.clone();
            let id = next.commit_iteration(p, at)?.id.clone();
            Ok((next, id))
        });
        match result {
            Ok((next, id)) => {
                self.store.persist(&next)?;
                self.session = next;
                Ok(id)
            }
            Err(err) => {
                let stage = match &err {
                    EngineError::Backend { stage, .. } | EngineError::Parse { stage, .. } => Some(*stage),
                    _ => None,
                };
                if stage.is_some() {
                    self.commit(|s| {
                        s.record_failure(story_id, stage, &err, at);
                        Ok(())
                    })?;
                }
                Err(err)
            }
        }
    }

    /// Plans several stories with at most `config.max_in_flight` backend
    /// conversations at once, then commits them one by one in input order.
    pub fn run_iterations(
        &mut self,
        story_ids: &[StoryId],
        prompts: &PromptSet,
        backend: &dyn CompletionBackend,
        options: RunOptions,
    ) -> Vec<Result<IterationId, EngineError>> {
        let width = self.session.config.max_in_flight.max(1);
        let mut prepared = Vec::with_capacity(story_ids.len());
        for chunk in story_ids.chunks(width) {
            let session = &self.session;
            let batch: Vec<_> = std::thread::scope(|scope| {
                let workers: Vec<_> = chunk
                    .iter()
                    .map(|id| scope.spawn(move || prepare_iteration(session, id, prompts, backend, options)))
                    .collect();
                workers.into_iter().map(|w| w.join().expect("planner worker panicked")).collect()
            });
            prepared.extend(batch);
        }
        story_ids
            .iter()
            .zip(prepared)
            .map(|(id, p)| self.commit_prepared(id, p))
            .collect()
    }

    pub fn apply_decisions(&mut self, decisions: Vec<DecisionInput>, actor: &str) -> Result<(), EngineError> {
        let at = self.clock.now();
        let stamped = decisions.into_iter().map(|d| d.stamp(actor, at)).collect();
        self.commit(|s| s.apply_decisions(stamped))
    }

    pub fn finalize(&mut self, confirmation: &FinalConfirmation) -> Result<Finalization, EngineError> {
        if let Some(done) = &self.session.finalization {
            return Ok(done.clone());
        }
        let at = self.clock.now();
        self.commit(|s| s.finalize(confirmation, at))
    }
}
