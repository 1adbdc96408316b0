//! The human validation step, operable from a CSV file or over local HTTP.
//!
//! Both routes funnel every mutation through the engine's session handle.

mod batch;
mod service;

use serde::{Deserialize, Serialize};

use crate::dedup::MatchBasis;
use crate::domain::{IterationId, TaskId, TaskKind};
use crate::engine::{EngineError, Session};

pub use batch::{apply_pending, export_pending, parse_review_csv, ReviewError, REVIEW_HEADER};
pub use service::{serve, ServeError, ServeOptions, ServiceHandle, API_BASE};

pub const DEFAULT_ACTOR: &str = "operator";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProjection {
    pub id: TaskId,
    pub kind: TaskKind,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateHint {
    pub task: TaskProjection,
    pub in_inventory: bool,
    pub score: f64,
    pub basis: MatchBasis,
}

/// A pending task as shown to the validator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingView {
    pub iteration_id: IterationId,
    pub task: TaskProjection,
    pub origin_questions: Vec<String>,
    pub duplicate_hints: Vec<DuplicateHint>,
}

fn projection(session: &Session, id: &TaskId) -> Option<(TaskProjection, bool)> {
    if let Some(t) = session.inventory.get(id) {
        return Some((
            TaskProjection { id: t.id.clone(), kind: t.kind, name: t.name.clone(), description: t.description.clone() },
            true,
        ));
    }
    session.find_task(id).map(|(_, t)| {
        (TaskProjection { id: t.id.clone(), kind: t.kind, name: t.name.clone(), description: t.description.clone() }, false)
    })
}

/// Pending tasks of one iteration with their origin questions and the
/// duplicate candidates they take part in.
pub fn pending_views(session: &Session, iteration_id: &IterationId) -> Result<Vec<PendingView>, EngineError> {
    let iteration = session
        .iteration(iteration_id)
        .ok_or_else(|| EngineError::UnknownIteration(iteration_id.clone()))?;
    let views = iteration
        .tasks
        .iter()
        .filter(|t| t.status.is_pending())
        .map(|t| {
            let origin_questions = t
                .origin_question_ids
                .iter()
                .filter_map(|q| session.question(q).map(|q| q.text.clone()))
                .collect();
            let duplicate_hints = iteration
                .duplicate_candidates
                .iter()
                .filter_map(|c| {
                    let other = if c.new_task_id == t.id {
                        &c.existing_task_id
                    } else if c.existing_task_id == t.id {
                        &c.new_task_id
                    } else {
                        return None;
                    };
                    let (task, in_inventory) = projection(session, other)?;
                    Some(DuplicateHint { task, in_inventory, score: c.score, basis: c.basis })
                })
                .collect();
            PendingView {
                iteration_id: iteration.id.clone(),
                task: TaskProjection {
                    id: t.id.clone(),
                    kind: t.kind,
                    name: t.name.clone(),
                    description: t.description.clone(),
                },
                origin_questions,
                duplicate_hints,
            }
        })
        .collect();
    Ok(views)
}
