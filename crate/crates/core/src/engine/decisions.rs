use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Decision, EngineError, IterationStatus, Session, Verdict};
use crate::domain::{normalize_task_name, DomainError, TaskId, TaskStatus};

/// A verdict on one task before it is stamped with actor and time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionInput {
    pub task_id: TaskId,
    #[serde(flatten)]
    pub verdict: Verdict,
}

impl DecisionInput {
    pub fn stamp(self, actor: &str, at: DateTime<Utc>) -> Decision {
        Decision { task_id: self.task_id, verdict: self.verdict, actor: actor.to_string(), at }
    }
}

impl Session {
    /// Applies a batch of verdicts in order. The batch is all-or-nothing: on
    /// any error the session is left untouched.
    pub fn apply_decisions(&mut self, decisions: Vec<Decision>) -> Result<(), EngineError> {
        if self.is_finalized() {
            return Err(EngineError::Finalized);
        }
        let mut next = self.clone();
        for decision in decisions {
            next.apply_one(&decision)?;
            next.decision_log.push(decision);
        }
        for it in &mut next.iterations {
            if it.status == IterationStatus::AwaitingValidation && it.tasks.iter().all(|t| !t.status.is_pending()) {
                it.status = IterationStatus::Validated;
            }
        }
        *self = next;
        Ok(())
    }

    fn apply_one(&mut self, decision: &Decision) -> Result<(), EngineError> {
        let task_id = &decision.task_id;
        let (it_idx, task_idx) = self
            .iterations
            .iter()
            .enumerate()
            .find_map(|(i, it)| it.tasks.iter().position(|t| &t.id == task_id).map(|j| (i, j)))
            .ok_or_else(|| EngineError::UnknownTask(task_id.clone()))?;
        let iteration = &self.iterations[it_idx];
        let task = &iteration.tasks[task_idx];
        if iteration.status != IterationStatus::AwaitingValidation || !task.status.is_pending() {
            return Err(EngineError::DoubleDecision(task_id.clone()));
        }
        let task = task.clone();

        let new_status = match &decision.verdict {
            Verdict::Accept => {
                self.insert_accepted(task_id, task.clone().with_status(TaskStatus::Accepted))?;
                TaskStatus::Accepted
            }
            Verdict::Reject => TaskStatus::Rejected,
            Verdict::Edit { kind, name, description } => {
                let invalid = |reason: String| EngineError::InvalidEdit { task: task_id.clone(), reason };
                let normalized = normalize_task_name(name).map_err(|e| invalid(e.to_string()))?;
                let description = description.trim();
                if description.is_empty() {
                    return Err(invalid(DomainError::EmptyDescription.to_string()));
                }
                let edited = crate::domain::Task {
                    kind: *kind,
                    name: normalized,
                    raw_name: name.trim().to_string(),
                    description: description.to_string(),
                    status: TaskStatus::Edited,
                    ..task.clone()
                };
                self.insert_accepted(task_id, edited)?;
                TaskStatus::Edited
            }
            Verdict::Merge { into } => {
                if self.inventory.get(into).is_none() {
                    return Err(EngineError::MergeTargetMissing { task: task_id.clone(), target: into.clone() });
                }
                self.inventory.record_merge(into, task_id.clone());
                TaskStatus::MergedInto(into.clone())
            }
        };
        self.iterations[it_idx].tasks[task_idx].status = new_status;
        Ok(())
    }

    fn insert_accepted(&mut self, task_id: &TaskId, task: crate::domain::Task) -> Result<(), EngineError> {
        self.inventory.insert(task).map_err(|e| match e {
            DomainError::KeyCollision { kind, name } => EngineError::KeyCollision { task: task_id.clone(), kind, name },
            other => EngineError::Domain(other),
        })
    }
}

impl crate::domain::Task {
    fn with_status(mut self, status: TaskStatus) -> Self {
        self.status = status;
        self
    }
}
