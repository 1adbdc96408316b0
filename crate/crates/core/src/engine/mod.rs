//! Session state and the estimation loop.
//!
//! For each seed story the engine generates related questions, asks the
//! planner for MVC tasks covering the story and all its questions, flags
//! near-duplicates and queues every task for a human verdict. Accepted tasks
//! accumulate in the inventory. The decision log is append-only and replaying
//! it over the iterations' tasks rebuilds the inventory.

mod decisions;
mod handle;
mod run;

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dedup::{DuplicateCandidate, Threshold};
use crate::domain::{
    DomainError, Inventory, IterationId, Question, QuestionId, StoryId, Task, TaskId, TaskKind,
    TaskStatus, UserStory,
};
use crate::llm::{BackendDescriptor, BackendError, LiveConfig, ModelParams};
use crate::parser::{ParseError, ParseMode, Skipped};
use crate::prompts::{default_baseline_tools, PromptError, PromptSet, TemplateVersions};

pub use decisions::DecisionInput;
pub use handle::{FileStore, Persist, SessionHandle};
pub use run::{prepare_iteration, PreparedIteration, RunOptions};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_N_QUESTIONS: usize = 6;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown story {0}")]
    UnknownStory(StoryId),
    #[error("unknown iteration {0}")]
    UnknownIteration(IterationId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {0} already has a decision")]
    DoubleDecision(TaskId),
    #[error("task {task}: merge target {target} is not an accepted inventory task")]
    MergeTargetMissing { task: TaskId, target: TaskId },
    #[error("task {task}: inventory already holds {kind} {name:?}; merge instead")]
    KeyCollision { task: TaskId, kind: TaskKind, name: String },
    #[error("task {task}: invalid edit: {reason}")]
    InvalidEdit { task: TaskId, reason: String },
    #[error("story {0} already has an iteration awaiting validation")]
    IterationAwaiting(StoryId),
    #[error("iterations awaiting validation: {0:?}")]
    UnvalidatedIterations(Vec<IterationId>),
    #[error("session is finalized")]
    Finalized,
    #[error("inventory snapshot is {actual}, confirmation was for {expected}")]
    SnapshotMismatch { expected: String, actual: String },
    #[error("{stage} call failed: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("{stage} output rejected: {source}")]
    Parse {
        stage: Stage,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("session file is corrupt: {0}")]
    Corrupt(String),
    #[error("persisting session: {0}")]
    Persist(String),
}

impl EngineError {
    /// Stable variant name for machine-readable error output.
    pub fn code(&self) -> &'static str {
        use EngineError::*;
        match self {
            UnknownStory(_) => "UnknownStory",
            UnknownIteration(_) => "UnknownIteration",
            UnknownTask(_) => "UnknownTask",
            DoubleDecision(_) => "DoubleDecision",
            MergeTargetMissing { .. } => "MergeTargetMissing",
            KeyCollision { .. } => "KeyCollision",
            InvalidEdit { .. } => "InvalidEdit",
            IterationAwaiting(_) => "IterationAwaiting",
            UnvalidatedIterations(_) => "UnvalidatedIterations",
            Finalized => "Finalized",
            SnapshotMismatch { .. } => "SnapshotMismatch",
            Backend { .. } => "Backend",
            Parse { .. } => "Parse",
            Prompt(_) => "Prompt",
            Domain(_) => "Domain",
            InvalidConfig(_) => "InvalidConfig",
            Corrupt(_) => "Corrupt",
            Persist(_) => "Persist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub n_questions: usize,
    pub threshold: Threshold,
    pub minimize: bool,
    pub dedup: bool,
    pub parse_mode: ParseMode,
    pub baseline_tools: Vec<String>,
    /// Contextual memory rendered into the planner prompt.
    pub context: String,
    /// Known data sources, used to document what is out of scope.
    pub catalog: Vec<String>,
    pub template_versions: TemplateVersions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendDescriptor>,
    pub model: ModelParams,
    pub live: LiveConfig,
    pub max_in_flight: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_questions: DEFAULT_N_QUESTIONS,
            threshold: Threshold::default(),
            minimize: true,
            dedup: true,
            parse_mode: ParseMode::Lenient,
            baseline_tools: default_baseline_tools(),
            context: String::new(),
            catalog: Vec::new(),
            template_versions: PromptSet::default().versions(),
            prompts_dir: None,
            backend: None,
            model: ModelParams::default(),
            live: LiveConfig::default(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_in_flight == 0 {
            return Err(EngineError::InvalidConfig("max_in_flight must be positive".into()));
        }
        let unique: BTreeSet<&String> = self.catalog.iter().collect();
        if unique.len() != self.catalog.len() {
            return Err(EngineError::InvalidConfig("catalog entries must be unique".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    QuestionGeneration,
    Planning,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::QuestionGeneration => "question generation",
            Stage::Planning => "planner",
        })
    }
}

/// One prompt/response pair sent to the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub stage: Stage,
    pub request_key: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationStatus {
    AwaitingValidation,
    Validated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub id: IterationId,
    pub story_id: StoryId,
    /// Seed question first, then the generated ones.
    pub question_ids: Vec<QuestionId>,
    pub n_requested: usize,
    pub minimize: bool,
    pub template_versions: TemplateVersions,
    pub planner_prompt_hash: String,
    pub exchanges: Vec<Exchange>,
    /// Tasks as parsed. Content is never rewritten; edits land in the inventory.
    pub tasks: Vec<Task>,
    pub skipped_rows: Vec<Skipped>,
    pub warnings: Vec<String>,
    pub duplicate_candidates: Vec<DuplicateCandidate>,
    pub status: IterationStatus,
    pub created_at: DateTime<Utc>,
}

impl Iteration {
    pub fn pending_task_ids(&self) -> Vec<TaskId> {
        self.tasks.iter().filter(|t| t.status.is_pending()).map(|t| t.id.clone()).collect()
    }

    pub fn task(&self, id: &TaskId) -> Option<&Task> {
        self.tasks.iter().find(|t| &t.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    Edit { kind: TaskKind, name: String, description: String },
    Merge { into: TaskId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub task_id: TaskId,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub actor: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedAttempt {
    pub story_id: StoryId,
    pub stage: Option<Stage>,
    pub error: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finalization {
    pub snapshot_hash: String,
    pub confirmed_by: String,
    pub inventory_size: usize,
    pub at: DateTime<Utc>,
}

/// The human sign-off on the final inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalConfirmation {
    pub actor: String,
    /// When set, finalization only succeeds if the inventory still hashes to this.
    pub expected_snapshot: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdCounters {
    pub story: u64,
    pub question: u64,
    pub task: u64,
    pub iteration: u64,
}

impl IdCounters {
    fn next(counter: &mut u64, prefix: char) -> String {
        *counter += 1;
        format!("{prefix}{:05}", *counter)
    }

    pub fn story(&mut self) -> StoryId {
        StoryId(Self::next(&mut self.story, 'S'))
    }

    pub fn question(&mut self) -> QuestionId {
        QuestionId(Self::next(&mut self.question, 'Q'))
    }

    pub fn task(&mut self) -> TaskId {
        TaskId(Self::next(&mut self.task, 'T'))
    }

    pub fn iteration(&mut self) -> IterationId {
        IterationId(Self::next(&mut self.iteration, 'I'))
    }
}

/// One row of the convergence series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub iteration_id: IterationId,
    pub new_accepted: usize,
    pub duplicates_flagged: usize,
    pub rejected: usize,
    pub merged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub schema_version: u32,
    pub config: SessionConfig,
    pub stories: Vec<UserStory>,
    pub questions: Vec<Question>,
    pub iterations: Vec<Iteration>,
    pub inventory: Inventory,
    pub decision_log: Vec<Decision>,
    pub failed_attempts: Vec<FailedAttempt>,
    pub finalization: Option<Finalization>,
    pub ids: IdCounters,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            config,
            stories: Vec::new(),
            questions: Vec::new(),
            iterations: Vec::new(),
            inventory: Inventory::new(),
            decision_log: Vec::new(),
            failed_attempts: Vec::new(),
            finalization: None,
            ids: IdCounters::default(),
        })
    }

    pub fn is_finalized(&self) -> bool {
        self.finalization.is_some()
    }

    pub fn add_story(&mut self, text: &str, at: DateTime<Utc>) -> Result<StoryId, EngineError> {
        if self.is_finalized() {
            return Err(EngineError::Finalized);
        }
        let mut ids = self.ids.clone();
        let story = UserStory::new(ids.story(), text, at)?;
        let id = story.id.clone();
        self.ids = ids;
        self.stories.push(story);
        Ok(id)
    }

    pub fn story(&self, id: &StoryId) -> Option<&UserStory> {
        self.stories.iter().find(|s| &s.id == id)
    }

    pub fn question(&self, id: &QuestionId) -> Option<&Question> {
        self.questions.iter().find(|q| &q.id == id)
    }

    pub fn iteration(&self, id: &IterationId) -> Option<&Iteration> {
        self.iterations.iter().find(|i| &i.id == id)
    }

    /// Stories that have never been planned, in creation order.
    pub fn unplanned_stories(&self) -> Vec<StoryId> {
        self.stories
            .iter()
            .filter(|s| !self.iterations.iter().any(|i| i.story_id == s.id))
            .map(|s| s.id.clone())
            .collect()
    }

    pub fn awaiting_iterations(&self) -> Vec<&Iteration> {
        self.iterations.iter().filter(|i| i.status == IterationStatus::AwaitingValidation).collect()
    }

    pub fn find_task(&self, id: &TaskId) -> Option<(&Iteration, &Task)> {
        self.iterations.iter().find_map(|it| it.task(id).map(|t| (it, t)))
    }

    pub fn record_failure(&mut self, story_id: &StoryId, stage: Option<Stage>, error: &EngineError, at: DateTime<Utc>) {
        self.failed_attempts.push(FailedAttempt {
            story_id: story_id.clone(),
            stage,
            error: error.to_string(),
            at,
        });
    }

    /// Lowercase hex SHA-256 of the inventory as sorted (kind, name, description) triples.
    pub fn snapshot_hash(&self) -> String {
        inventory_hash(&self.inventory)
    }

    pub fn finalize(&mut self, confirmation: &FinalConfirmation, at: DateTime<Utc>) -> Result<Finalization, EngineError> {
        if let Some(done) = &self.finalization {
            return Ok(done.clone());
        }
        let open: Vec<IterationId> = self.awaiting_iterations().iter().map(|i| i.id.clone()).collect();
        if !open.is_empty() {
            return Err(EngineError::UnvalidatedIterations(open));
        }
        let actual = self.snapshot_hash();
        if let Some(expected) = &confirmation.expected_snapshot {
            if expected != &actual {
                return Err(EngineError::SnapshotMismatch { expected: expected.clone(), actual });
            }
        }
        let done = Finalization {
            snapshot_hash: actual,
            confirmed_by: confirmation.actor.clone(),
            inventory_size: self.inventory.len(),
            at,
        };
        self.finalization = Some(done.clone());
        Ok(done)
    }

    /// Per-iteration counts of accepted, flagged, rejected and merged tasks.
    pub fn convergence_stats(&self) -> Vec<ConvergencePoint> {
        self.iterations
            .iter()
            .map(|it| {
                let mut point = ConvergencePoint {
                    iteration_id: it.id.clone(),
                    new_accepted: 0,
                    duplicates_flagged: it.duplicate_candidates.len(),
                    rejected: 0,
                    merged: 0,
                };
                for d in self.decision_log.iter().filter(|d| it.task(&d.task_id).is_some()) {
                    match d.verdict {
                        Verdict::Accept | Verdict::Edit { .. } => point.new_accepted += 1,
                        Verdict::Reject => point.rejected += 1,
                        Verdict::Merge { .. } => point.merged += 1,
                    }
                }
                point
            })
            .collect()
    }

    /// Rebuilds the inventory by replaying the decision log over the
    /// iterations' tasks, starting from an empty inventory.
    pub fn replay_inventory(&self) -> Result<Inventory, EngineError> {
        let mut scratch = self.clone();
        scratch.inventory = Inventory::new();
        scratch.decision_log.clear();
        scratch.finalization = None;
        for it in &mut scratch.iterations {
            it.status = IterationStatus::AwaitingValidation;
            for t in &mut it.tasks {
                t.status = TaskStatus::Pending;
            }
        }
        scratch.apply_decisions(self.decision_log.clone())?;
        Ok(scratch.inventory)
    }

    /// Structural checks run when a session file is loaded.
    pub fn verify(&self) -> Result<(), EngineError> {
        let corrupt = |m: String| Err(EngineError::Corrupt(m));
        if self.schema_version != SCHEMA_VERSION {
            return corrupt(format!("unsupported schema_version {}", self.schema_version));
        }
        self.config.validate().map_err(|e| EngineError::Corrupt(e.to_string()))?;
        let mut keys = BTreeSet::new();
        for t in self.inventory.iter() {
            if !keys.insert(t.key()) {
                return corrupt(format!("duplicate inventory key ({}, {})", t.kind, t.name));
            }
            for q in &t.origin_question_ids {
                match self.question(q) {
                    Some(question) if question.story_id == t.origin_story_id => {}
                    _ => return corrupt(format!("task {} references foreign or missing question {q}", t.id)),
                }
            }
        }
        for it in &self.iterations {
            if self.story(&it.story_id).is_none() {
                return corrupt(format!("iteration {} references missing story {}", it.id, it.story_id));
            }
            let pending = it.tasks.iter().any(|t| t.status.is_pending());
            if it.status == IterationStatus::Validated && pending {
                return corrupt(format!("iteration {} is validated but has pending tasks", it.id));
            }
        }
        let replayed = self.replay_inventory().map_err(|e| EngineError::Corrupt(format!("decision log replay: {e}")))?;
        if replayed != self.inventory {
            return corrupt("decision log replay does not reproduce the inventory".into());
        }
        Ok(())
    }

    /// Canonical session file text: pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("session serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let session: Session = serde_json::from_str(text).map_err(|e| EngineError::Corrupt(e.to_string()))?;
        session.verify()?;
        Ok(session)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Corrupt(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub fn inventory_hash(inventory: &Inventory) -> String {
    let mut rows: Vec<(TaskKind, &str, &str)> =
        inventory.iter().map(|t| (t.kind, t.name.as_str(), t.description.as_str())).collect();
    rows.sort();
    let canonical: Vec<(&str, &str, &str)> = rows.into_iter().map(|(k, n, d)| (k.label(), n, d)).collect();
    let bytes = serde_json::to_vec(&canonical).expect("inventory serializes");
    hex::encode(Sha256::digest(&bytes))
}
