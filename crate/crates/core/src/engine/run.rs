use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};

use super::{EngineError, Exchange, Iteration, IterationStatus, Session, Stage};
use crate::dedup::find_duplicates;
use crate::domain::{Question, StoryId};
use crate::llm::{CompletionBackend, CompletionRequest};
use crate::parser::{parse_planner_csv, parse_question_list, raw_to_task, RawTask, Skipped};
use crate::prompts::{PromptSet, TemplateVersions};

/// Per-run overrides of the session defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub n_questions: usize,
    pub minimize: bool,
}

impl RunOptions {
    pub fn from_session(session: &Session) -> Self {
        Self { n_questions: session.config.n_questions, minimize: session.config.minimize }
    }
}

/// The backend-facing half of an iteration: prompts sent, responses parsed.
/// Nothing here has an id yet; `Session::commit_iteration` assigns them.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedIteration {
    pub story_id: StoryId,
    pub questions: Vec<String>,
    pub n_requested: usize,
    pub minimize: bool,
    pub template_versions: TemplateVersions,
    pub planner_prompt_hash: String,
    pub exchanges: Vec<Exchange>,
    pub raw_tasks: Vec<RawTask>,
    pub skipped_rows: Vec<Skipped>,
    pub warnings: Vec<String>,
}

fn check_runnable(session: &Session, story_id: &StoryId) -> Result<(), EngineError> {
    if session.is_finalized() {
        return Err(EngineError::Finalized);
    }
    if session.story(story_id).is_none() {
        return Err(EngineError::UnknownStory(story_id.clone()));
    }
    if session
        .iterations
        .iter()
        .any(|i| &i.story_id == story_id && i.status == IterationStatus::AwaitingValidation)
    {
        return Err(EngineError::IterationAwaiting(story_id.clone()));
    }
    Ok(())
}

/// Generates related questions and runs the planner for one story against
/// the session's current inventory. Reads the session only.
pub fn prepare_iteration(
    session: &Session,
    story_id: &StoryId,
    prompts: &PromptSet,
    backend: &dyn CompletionBackend,
    options: RunOptions,
) -> Result<PreparedIteration, EngineError> {
    check_runnable(session, story_id)?;
    let story = session.story(story_id).expect("checked above");
    let config = &session.config;
    let mut exchanges = Vec::new();
    let mut warnings = Vec::new();
    let mut questions = vec![story.text.clone()];

    if options.n_questions > 0 {
        let context = Some(config.context.as_str()).filter(|c| !c.is_empty());
        let prompt = prompts.render_question_prompt(story, options.n_questions, context)?;
        let request = CompletionRequest::new(prompt, &config.model);
        let response = backend
            .complete(&request)
            .map_err(|source| EngineError::Backend { stage: Stage::QuestionGeneration, source })?;
        let report = parse_question_list(&response)
            .map_err(|source| EngineError::Parse { stage: Stage::QuestionGeneration, source })?;
        let mut generated = report.parsed;
        if generated.len() < options.n_questions {
            warnings.push(format!(
                "question generator produced {} of {} requested questions",
                generated.len(),
                options.n_questions
            ));
        } else if generated.len() > options.n_questions {
            warnings.push(format!(
                "question generator produced {} questions; kept the first {}",
                generated.len(),
                options.n_questions
            ));
            generated.truncate(options.n_questions);
        }
        questions.extend(generated);
        exchanges.push(Exchange {
            stage: Stage::QuestionGeneration,
            request_key: request.request_key(),
            prompt: request.prompt,
            response,
        });
    }

    let prompt = prompts.render_planner_prompt(
        &questions,
        &session.inventory,
        &config.baseline_tools,
        &config.context,
        options.minimize,
    )?;
    let planner_prompt_hash = hex::encode(Sha256::digest(prompt.as_bytes()));
    let request = CompletionRequest::new(prompt, &config.model);
    let response = backend
        .complete(&request)
        .map_err(|source| EngineError::Backend { stage: Stage::Planning, source })?;
    let report = parse_planner_csv(&response, config.parse_mode)
        .map_err(|source| EngineError::Parse { stage: Stage::Planning, source })?;
    exchanges.push(Exchange {
        stage: Stage::Planning,
        request_key: request.request_key(),
        prompt: request.prompt,
        response,
    });

    Ok(PreparedIteration {
        story_id: story_id.clone(),
        questions,
        n_requested: options.n_questions,
        minimize: options.minimize,
        template_versions: prompts.versions(),
        planner_prompt_hash,
        exchanges,
        raw_tasks: report.parsed,
        skipped_rows: report.skipped,
        warnings,
    })
}

impl Session {
    /// Assigns ids, builds pending tasks, flags duplicates against the
    /// current inventory and appends the iteration.
    pub fn commit_iteration(&mut self, prepared: PreparedIteration, at: DateTime<Utc>) -> Result<&Iteration, EngineError> {
        check_runnable(self, &prepared.story_id)?;
        let mut ids = self.ids.clone();
        let iteration_id = ids.iteration();
        let questions: Vec<Question> = prepared
            .questions
            .iter()
            .map(|text| Question { id: ids.question(), story_id: prepared.story_id.clone(), text: text.clone() })
            .collect();
        let question_ids: Vec<_> = questions.iter().map(|q| q.id.clone()).collect();

        let mut warnings = prepared.warnings;
        let mut tasks = Vec::with_capacity(prepared.raw_tasks.len());
        for raw in &prepared.raw_tasks {
            match raw_to_task(raw, ids.task(), question_ids.clone(), prepared.story_id.clone()) {
                Ok(task) => tasks.push(task),
                Err(e) => warnings.push(format!("planner line {} dropped: {e}", raw.source_line)),
            }
        }
        if tasks.is_empty() {
            return Err(EngineError::Parse { stage: Stage::Planning, source: crate::parser::ParseError::EmptyOutput });
        }
        let duplicate_candidates = if self.config.dedup {
            find_duplicates(&tasks, &self.inventory, self.config.threshold)
        } else {
            Vec::new()
        };

        self.ids = ids;
        self.questions.extend(questions);
        self.iterations.push(Iteration {
            id: iteration_id,
            story_id: prepared.story_id,
            question_ids,
            n_requested: prepared.n_requested,
            minimize: prepared.minimize,
            template_versions: prepared.template_versions,
            planner_prompt_hash: prepared.planner_prompt_hash,
            exchanges: prepared.exchanges,
            tasks,
            skipped_rows: prepared.skipped_rows,
            warnings,
            duplicate_candidates,
            status: IterationStatus::AwaitingValidation,
            created_at: at,
        });
        Ok(self.iterations.last().expect("just pushed"))
    }
}
