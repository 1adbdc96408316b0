//! Prompt templates for question generation and planning.
//!
//! Templates are plain UTF-8 text with `{{placeholder}}` slots. Rendering is
//! a single left-to-right pass, so bound values are never re-expanded.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Inventory, UserStory};

pub const QUESTION_GEN_FILE: &str = "question_gen.prompt";
pub const PLANNER_FILE: &str = "planner.prompt";

pub const N_QUESTIONS: &str = "n_questions";
pub const USER_REQUEST: &str = "user_request";
pub const AVAILABLE_TOOLS: &str = "available_tools";
pub const CONTEXTUAL_INFORMATION: &str = "contextual_information";
pub const MINIMIZE_CLAUSE: &str = "minimize_clause";

pub const PLACEHOLDERS: [&str; 5] =
    [N_QUESTIONS, USER_REQUEST, AVAILABLE_TOOLS, CONTEXTUAL_INFORMATION, MINIMIZE_CLAUSE];

pub const MINIMIZE_SENTENCE: &str =
    "You should minimize redundant tasks or tools and reuse the available tools whenever possible.";

pub const DEFAULT_BASELINE_TOOLS: [&str; 2] = ["Search Tool", "Math Tool"];

const DEFAULT_QUESTION_GEN: &str = include_str!("../prompts/question_gen.prompt");
const DEFAULT_PLANNER: &str = include_str!("../prompts/planner.prompt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template}: unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: unbound placeholders {names:?}")]
    Unbound { template: String, names: Vec<String> },
    #[error("invalid story: {0}")]
    InvalidStory(String),
    #[error("question count must be at least 1")]
    InvalidCount,
    #[error("planner prompt needs at least one question")]
    NoQuestions,
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub version: String,
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn segments(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let ident = &after[..end];
        if ident.is_empty() || !ident.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            out.push(Segment::Text(&rest[..start + 2]));
            rest = after;
            continue;
        }
        out.push(Segment::Text(&rest[..start]));
        out.push(Segment::Slot(ident));
        rest = &after[end + 2..];
    }
    out.push(Segment::Text(rest));
    out
}

impl PromptTemplate {
    pub fn new(name: &str, body: &str) -> Result<Self, PromptError> {
        for seg in segments(body) {
            if let Segment::Slot(ident) = seg {
                if !PLACEHOLDERS.contains(&ident) {
                    return Err(PromptError::UnknownPlaceholder {
                        template: name.to_string(),
                        name: ident.to_string(),
                    });
                }
            }
        }
        let digest = Sha256::digest(body.as_bytes());
        Ok(Self {
            name: name.to_string(),
            body: body.to_string(),
            version: format!("sha256:{}", &hex::encode(digest)[..12]),
        })
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        segments(&self.body)
            .into_iter()
            .filter_map(|s| match s {
                Segment::Slot(ident) => Some(ident),
                Segment::Text(_) => None,
            })
            .collect()
    }

    /// Substitutes every slot. Bindings the template does not use are ignored.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let missing: Vec<String> = self
            .placeholders()
            .into_iter()
            .filter(|p| !bindings.contains_key(p))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(PromptError::Unbound { template: self.name.clone(), names: missing });
        }
        let mut out = String::with_capacity(self.body.len() + 256);
        for seg in segments(&self.body) {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(ident) => out.push_str(&bindings[ident]),
            }
        }
        Ok(out)
    }
}

/// Versions of the templates a session or iteration rendered with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateVersions {
    pub question_gen: String,
    pub planner: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub question_gen: PromptTemplate,
    pub planner: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            question_gen: PromptTemplate::new(QUESTION_GEN_FILE, DEFAULT_QUESTION_GEN)
                .expect("bundled question template is valid"),
            planner: PromptTemplate::new(PLANNER_FILE, DEFAULT_PLANNER)
                .expect("bundled planner template is valid"),
        }
    }
}

impl PromptSet {
    /// Loads `question_gen.prompt` and `planner.prompt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |file: &str| {
            let path = dir.join(file);
            std::fs::read_to_string(&path)
                .map_err(|source| PromptError::Io { path: path.display().to_string(), source })
                .and_then(|body| PromptTemplate::new(file, &body))
        };
        Ok(Self { question_gen: read(QUESTION_GEN_FILE)?, planner: read(PLANNER_FILE)? })
    }

    pub fn versions(&self) -> TemplateVersions {
        TemplateVersions {
            question_gen: self.question_gen.version.clone(),
            planner: self.planner.version.clone(),
        }
    }

    pub fn render_question_prompt(
        &self,
        story: &UserStory,
        n: usize,
        context: Option<&str>,
    ) -> Result<String, PromptError> {
        render_question_prompt(&self.question_gen, story, n, context)
    }

    pub fn render_planner_prompt<S: AsRef<str>>(
        &self,
        questions: &[S],
        current_tools: &Inventory,
        baseline_tools: &[String],
        context: &str,
        minimize: bool,
    ) -> Result<String, PromptError> {
        render_planner_prompt(&self.planner, questions, current_tools, baseline_tools, context, minimize)
    }
}

pub fn render_question_prompt(
    template: &PromptTemplate,
    story: &UserStory,
    n: usize,
    context: Option<&str>,
) -> Result<String, PromptError> {
    if story.text.trim().is_empty() {
        return Err(PromptError::InvalidStory(format!("story {} has empty text", story.id)));
    }
    if n == 0 {
        return Err(PromptError::InvalidCount);
    }
    let mut bindings = BTreeMap::new();
    bindings.insert(N_QUESTIONS, n.to_string());
    bindings.insert(USER_REQUEST, story.text.clone());
    if let Some(ctx) = context {
        bindings.insert(CONTEXTUAL_INFORMATION, ctx.to_string());
    }
    template.render(&bindings)
}

/// One `- <tool>` line per baseline tool, then `- <name> (<kind label>)` per
/// inventory task.
pub fn available_tools_block(current_tools: &Inventory, baseline_tools: &[String]) -> String {
    baseline_tools
        .iter()
        .map(|t| format!("- {t}"))
        .chain(current_tools.iter().map(|t| format!("- {} ({})", t.name, t.kind.label())))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_planner_prompt<S: AsRef<str>>(
    template: &PromptTemplate,
    questions: &[S],
    current_tools: &Inventory,
    baseline_tools: &[String],
    context: &str,
    minimize: bool,
) -> Result<String, PromptError> {
    if questions.is_empty() {
        return Err(PromptError::NoQuestions);
    }
    let request = questions.iter().map(|q| q.as_ref().trim()).collect::<Vec<_>>().join("\n");
    let mut bindings = BTreeMap::new();
    bindings.insert(USER_REQUEST, request);
    bindings.insert(AVAILABLE_TOOLS, available_tools_block(current_tools, baseline_tools));
    bindings.insert(CONTEXTUAL_INFORMATION, context.to_string());
    bindings.insert(
        MINIMIZE_CLAUSE,
        if minimize { format!("\n{MINIMIZE_SENTENCE}") } else { String::new() },
    );
    template.render(&bindings)
}

pub fn default_baseline_tools() -> Vec<String> {
    DEFAULT_BASELINE_TOOLS.iter().map(|s| s.to_string()).collect()
}
