use std::path::Path;

use thiserror::Error;

use crate::domain::{TaskId, TaskKind};
use crate::engine::{DecisionInput, EngineError, Persist, Session, SessionHandle, Verdict};
use crate::store::write_atomic;

pub const REVIEW_HEADER: [&str; 6] = ["id", "kind", "name", "description", "verdict", "merge_target"];

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("no tasks are pending validation")]
    NothingPending,
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("review file: {0}")]
    File(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn row_err(row: usize, message: impl Into<String>) -> ReviewError {
    ReviewError::Row { row, message: message.into() }
}

/// Writes one CSV row per pending task, verdict and merge target left blank.
/// Returns the number of rows written.
pub fn export_pending(session: &Session, path: &Path) -> Result<usize, ReviewError> {
    let pending: Vec<_> = session
        .awaiting_iterations()
        .into_iter()
        .flat_map(|it| it.tasks.iter().filter(|t| t.status.is_pending()))
        .collect();
    if pending.is_empty() {
        return Err(ReviewError::NothingPending);
    }
    let mut writer = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Always).from_writer(Vec::new());
    let io = |e: csv::Error| ReviewError::File(e.to_string());
    writer.write_record(REVIEW_HEADER).map_err(io)?;
    for t in &pending {
        writer
            .write_record([t.id.as_str(), t.kind.label(), &t.name, &t.description, "", ""])
            .map_err(io)?;
    }
    let bytes = writer.into_inner().map_err(|e| ReviewError::File(e.to_string()))?;
    write_atomic(path, &bytes).map_err(|e| ReviewError::File(format!("{}: {e}", path.display())))?;
    Ok(pending.len())
}

/// Translates an edited review file into decisions. Row numbers count the
/// header as row 1.
pub fn parse_review_csv(session: &Session, text: &str) -> Result<Vec<DecisionInput>, ReviewError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| row_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != REVIEW_HEADER {
        return Err(row_err(1, format!("header must be {}", REVIEW_HEADER.join(","))));
    }
    let mut decisions = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| row_err(row, e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let task_id = TaskId(field(0).to_string());
        if task_id.as_str().is_empty() {
            return Err(row_err(row, "missing task id"));
        }
        let verdict = match field(4).to_ascii_lowercase().as_str() {
            "" => return Err(row_err(row, "missing verdict; every row needs accept, reject, edit or merge")),
            "accept" => {
                if let Some((_, task)) = session.find_task(&task_id) {
                    let unchanged = field(1) == task.kind.label() && field(2) == task.name && field(3) == task.description;
                    if !unchanged {
                        return Err(row_err(row, "kind, name or description changed; use verdict edit"));
                    }
                }
                Verdict::Accept
            }
            "reject" => Verdict::Reject,
            "edit" => {
                let kind = TaskKind::from_label(field(1)).map_err(|e| row_err(row, e.to_string()))?;
                Verdict::Edit { kind, name: field(2).to_string(), description: field(3).to_string() }
            }
            "merge" => {
                let target = field(5);
                if target.is_empty() {
                    return Err(row_err(row, "merge verdict needs a merge_target"));
                }
                Verdict::Merge { into: TaskId(target.to_string()) }
            }
            other => return Err(row_err(row, format!("unknown verdict {other:?}"))),
        };
        decisions.push(DecisionInput { task_id, verdict });
    }
    Ok(decisions)
}

/// Applies an edited review file. Nothing is applied unless every row is valid
/// and the engine accepts the whole batch.
pub fn apply_pending<P: Persist>(
    handle: &mut SessionHandle<P>,
    edited_file: &Path,
    actor: &str,
) -> Result<usize, ReviewError> {
    let text = std::fs::read_to_string(edited_file)
        .map_err(|e| ReviewError::File(format!("{}: {e}", edited_file.display())))?;
    let decisions = parse_review_csv(handle.session(), &text)?;
    let n = decisions.len();
    handle.apply_decisions(decisions, actor)?;
    Ok(n)
}
