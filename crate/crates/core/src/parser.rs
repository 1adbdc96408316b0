//! Tolerant parsing of LLM output: related-question lists and planner CSV.
//!
//! Both prompts forbid enumerations, fences and headers; models emit them
//! anyway. Every non-blank input line ends up either parsed or skipped with
//! a reason, so nothing is silently lost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    normalize_task_name, task_kind_from_label, DomainError, QuestionId, StoryId, Task, TaskId,
    TaskStatus,
};

/// Word count used to derive a name when the planner omits the function name.
pub const FALLBACK_NAME_WORDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTask {
    pub kind_label: String,
    pub function_name: Option<String>,
    pub description: String,
    pub source_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum SkipReason {
    MalformedRow(String),
    UnknownKindLabel(String),
    EmptyDescription,
    EmptyQuestion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub line: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport<T> {
    pub parsed: Vec<T>,
    pub skipped: Vec<Skipped>,
    pub strict_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ParseError {
    #[error("no questions found in generator output")]
    NoQuestions,
    #[error("planner output contains no rows")]
    EmptyOutput,
    #[error("line {line}: malformed row ({detail})")]
    MalformedRow { line: usize, detail: String },
    #[error("line {line}: unknown task kind label {label:?}")]
    UnknownKindLabel { line: usize, label: String },
    #[error("line {line}: empty task description")]
    EmptyDescription { line: usize },
}

impl Skipped {
    fn into_error(self) -> ParseError {
        let line = self.line;
        match self.reason {
            SkipReason::MalformedRow(detail) => ParseError::MalformedRow { line, detail },
            SkipReason::UnknownKindLabel(label) => ParseError::UnknownKindLabel { line, label },
            SkipReason::EmptyDescription => ParseError::EmptyDescription { line },
            SkipReason::EmptyQuestion => ParseError::NoQuestions,
        }
    }
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Strips one leading enumeration marker: `1.`, `12)`, `-`, `*` or `•`.
fn strip_marker(line: &str) -> &str {
    let s = line.trim_start();
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(after) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return after.trim_start();
            }
        }
        return s;
    }
    for bullet in ['-', '*', '•'] {
        if let Some(after) = s.strip_prefix(bullet) {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return after.trim_start();
            }
        }
    }
    s
}

pub fn parse_question_list(text: &str) -> Result<ParseReport<String>, ParseError> {
    let mut parsed = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let question = if is_fence(line) { "" } else { strip_marker(line).trim() };
        if question.is_empty() {
            skipped.push(Skipped { line: idx + 1, reason: SkipReason::EmptyQuestion });
        } else {
            parsed.push(question.to_string());
        }
    }
    if parsed.is_empty() {
        return Err(ParseError::NoQuestions);
    }
    let strict_ok = skipped.is_empty();
    Ok(ParseReport { parsed, skipped, strict_ok })
}

/// Splits one CSV record. Quoted fields may contain commas and `""` escapes.
fn split_csv_line(line: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.next_if(|c| *c == ' ' || *c == '\t').is_some() {}
        let mut field = String::new();
        if chars.next_if_eq(&'"').is_some() {
            let mut closed = false;
            while let Some(c) = chars.next() {
                if c == '"' {
                    if chars.next_if_eq(&'"').is_some() {
                        field.push('"');
                    } else {
                        closed = true;
                        break;
                    }
                } else {
                    field.push(c);
                }
            }
            if !closed {
                return Err("unterminated quote".into());
            }
            // Text between the closing quote and the next comma is kept.
            while let Some(c) = chars.next_if(|c| *c != ',') {
                field.push(c);
            }
        } else {
            while let Some(c) = chars.next_if(|c| *c != ',') {
                field.push(c);
            }
        }
        fields.push(field.trim().to_string());
        if chars.next().is_none() {
            break;
        }
    }
    Ok(fields)
}

fn parse_row(line: &str, line_no: usize) -> Result<RawTask, SkipReason> {
    let fields = split_csv_line(strip_marker(line)).map_err(SkipReason::MalformedRow)?;
    let (kind_label, function_name, description) = match fields.as_slice() {
        [kind, name, desc] => (kind, Some(name), desc),
        [kind, desc] => (kind, None, desc),
        other => return Err(SkipReason::MalformedRow(format!("{} fields", other.len()))),
    };
    task_kind_from_label(kind_label).map_err(|_| SkipReason::UnknownKindLabel(kind_label.clone()))?;
    if description.is_empty() {
        return Err(SkipReason::EmptyDescription);
    }
    Ok(RawTask {
        kind_label: kind_label.clone(),
        function_name: function_name.filter(|n| !n.is_empty()).cloned(),
        description: description.clone(),
        source_line: line_no,
    })
}

/// Parses planner output of the form `task type, function call name, task description`.
///
/// Code fences and a leading `task type` header row are dropped. Two-field
/// rows are read as `(kind, description)`. In lenient mode bad rows are
/// reported in `skipped`; in strict mode the first bad row is the error.
pub fn parse_planner_csv(text: &str, mode: ParseMode) -> Result<ParseReport<RawTask>, ParseError> {
    let mut parsed = Vec::new();
    let mut skipped = Vec::new();
    let mut seen_content = false;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() || is_fence(line) {
            continue;
        }
        if !seen_content {
            seen_content = true;
            let is_header = split_csv_line(strip_marker(line))
                .ok()
                .and_then(|f| f.into_iter().next())
                .is_some_and(|first| first.eq_ignore_ascii_case("task type"));
            if is_header {
                continue;
            }
        }
        match parse_row(line, line_no) {
            Ok(raw) => parsed.push(raw),
            Err(reason) => {
                let skip = Skipped { line: line_no, reason };
                if mode == ParseMode::Strict {
                    return Err(skip.into_error());
                }
                skipped.push(skip);
            }
        }
    }

    if parsed.is_empty() {
        return Err(match skipped.into_iter().next() {
            Some(first) => first.into_error(),
            None => ParseError::EmptyOutput,
        });
    }
    let strict_ok = skipped.is_empty();
    Ok(ParseReport { parsed, skipped, strict_ok })
}

fn csv_field(field: &str) -> String {
    let needs_quotes = field.is_empty()
        || field.contains([',', '"'])
        || field.starts_with(char::is_whitespace)
        || field.ends_with(char::is_whitespace);
    if needs_quotes {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Serializes raw tasks back into planner CSV, one row per task.
pub fn raw_tasks_to_csv(tasks: &[RawTask]) -> String {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&csv_field(&t.kind_label));
        if let Some(name) = &t.function_name {
            out.push(',');
            out.push_str(&csv_field(name));
        }
        out.push(',');
        out.push_str(&csv_field(&t.description));
        out.push('\n');
    }
    out
}

/// Builds a pending task from a parsed row.
///
/// The name comes from the function name, or from the first eight words of
/// the description when the planner left it out.
pub fn raw_to_task(
    raw: &RawTask,
    id: TaskId,
    origin_question_ids: Vec<QuestionId>,
    origin_story_id: StoryId,
) -> Result<Task, DomainError> {
    let kind = task_kind_from_label(&raw.kind_label)?;
    let description = raw.description.trim();
    if description.is_empty() {
        return Err(DomainError::EmptyDescription);
    }
    let raw_name = match raw.function_name.as_deref().map(str::trim) {
        Some(name) if !name.is_empty() => name.to_string(),
        _ => description.split_whitespace().take(FALLBACK_NAME_WORDS).collect::<Vec<_>>().join(" "),
    };
    let name = normalize_task_name(&raw_name)?;
    Ok(Task {
        id,
        kind,
        name,
        raw_name,
        description: description.to_string(),
        origin_question_ids,
        origin_story_id,
        status: TaskStatus::Pending,
    })
}
