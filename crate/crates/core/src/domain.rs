//! Shared domain vocabulary: task kinds, identifiers, stories, tasks and the
//! accumulated inventory.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("name {raw:?} normalizes to an empty identifier")]
    EmptyName { raw: String },
    #[error("unknown task kind label {0:?}")]
    UnknownKindLabel(String),
    #[error("task description is empty")]
    EmptyDescription,
    #[error("user story text is empty")]
    EmptyStory,
    #[error("inventory already holds a {kind} task named {name:?}")]
    KeyCollision { kind: TaskKind, name: String },
}

/// MVC classification of a planner task.
///
/// model maps to `DataSource`, control to `Algorithm` and view to `UiWidget`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Algorithm,
    DataSource,
    UiWidget,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Algorithm, TaskKind::DataSource, TaskKind::UiWidget];

    /// Human-facing label, matching the labels of a raw planner task table.
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::Algorithm => "Algorithm",
            TaskKind::DataSource => "Data Source",
            TaskKind::UiWidget => "User Interface",
        }
    }

    /// Accepts both the MVC vocabulary (model/view/control) and the table
    /// vocabulary (Data Source/Algorithm/User Interface), case-insensitively.
    pub fn from_label(label: &str) -> Result<Self, DomainError> {
        let folded = label.trim().to_lowercase();
        let folded = folded.split_whitespace().collect::<Vec<_>>().join(" ");
        match folded.as_str() {
            "model" | "data source" | "datasource" => Ok(TaskKind::DataSource),
            "control" | "algorithm" => Ok(TaskKind::Algorithm),
            "view" | "user interface" | "interface" | "ui" => Ok(TaskKind::UiWidget),
            _ => Err(DomainError::UnknownKindLabel(label.to_string())),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn task_kind_from_label(label: &str) -> Result<TaskKind, DomainError> {
    TaskKind::from_label(label)
}

// Uppercase letters without a distinct lowercase form (e.g. mathematical
// script capitals) survive lowercasing and must not trigger a camel split.
fn has_lower_form(c: char) -> bool {
    c.is_uppercase() && !c.to_lowercase().eq(std::iter::once(c))
}

/// Canonical identifier for a task name.
///
/// Lowercases, splits camel case on case boundaries, collapses every run of
/// non-alphanumeric characters into one underscore and trims underscores.
pub fn normalize_task_name(raw: &str) -> Result<String, DomainError> {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = String::with_capacity(raw.len() + 8);
    let mut pending_sep = false;

    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            pending_sep = true;
            continue;
        }
        if has_lower_form(c) && i > 0 {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase()
                || prev.is_numeric()
                || (prev.is_uppercase() && next_lower)
            {
                pending_sep = true;
            }
        }
        for lc in c.to_lowercase() {
            if lc.is_alphanumeric() {
                if pending_sep && !out.is_empty() {
                    out.push('_');
                }
                pending_sep = false;
                out.push(lc);
            } else {
                pending_sep = true;
            }
        }
    }

    if out.is_empty() {
        Err(DomainError::EmptyName { raw: raw.to_string() })
    } else {
        Ok(out)
    }
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

id_type!(StoryId);
id_type!(QuestionId);
id_type!(TaskId);
id_type!(IterationId);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserStory {
    pub id: StoryId,
    pub text: String,
    pub created_at: DateTime<Utc>,
}

impl UserStory {
    pub fn new(id: StoryId, text: &str, created_at: DateTime<Utc>) -> Result<Self, DomainError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(DomainError::EmptyStory);
        }
        Ok(Self { id, text: text.to_string(), created_at })
    }
}

/// A seed or generated question belonging to one story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub story_id: StoryId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Accepted,
    Rejected,
    MergedInto(TaskId),
    Edited,
}

impl TaskStatus {
    pub fn is_pending(&self) -> bool {
        matches!(self, TaskStatus::Pending)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub name: String,
    pub raw_name: String,
    pub description: String,
    pub origin_question_ids: Vec<QuestionId>,
    pub origin_story_id: StoryId,
    pub status: TaskStatus,
}

impl Task {
    pub fn key(&self) -> (TaskKind, &str) {
        (self.kind, self.name.as_str())
    }
}

/// The accumulated set of validated tasks, unique by `(kind, name)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    tasks: Vec<Task>,
    /// Tasks merged into an inventory task, keyed by the surviving task.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    lineage: BTreeMap<TaskId, Vec<TaskId>>,
}

impl Inventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: Task) -> Result<(), DomainError> {
        if self.contains_key(task.kind, &task.name) {
            return Err(DomainError::KeyCollision { kind: task.kind, name: task.name });
        }
        self.tasks.push(task);
        Ok(())
    }

    pub fn contains_key(&self, kind: TaskKind, name: &str) -> bool {
        self.tasks.iter().any(|t| t.kind == kind && t.name == name)
    }

    pub fn get(&self, id: &TaskId) -> Option<&Task> {
        self.tasks.iter().find(|t| &t.id == id)
    }

    pub fn record_merge(&mut self, into: &TaskId, merged: TaskId) {
        self.lineage.entry(into.clone()).or_default().push(merged);
    }

    pub fn merged_into(&self, id: &TaskId) -> &[TaskId] {
        self.lineage.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn iter(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn count(&self, kind: TaskKind) -> usize {
        self.tasks.iter().filter(|t| t.kind == kind).count()
    }
}
