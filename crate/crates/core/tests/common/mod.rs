#![allow(dead_code)]

pub mod corpus;
pub mod crash;
pub mod oracle;
pub mod review;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use storysizer_core::domain::{Inventory, UserStory};
use storysizer_core::engine::{FileStore, Session, SessionConfig, SessionHandle};
use storysizer_core::llm::{FixtureMetadata, FixtureStore, ModelParams, CompletionRequest};
use storysizer_core::parser::parse_question_list;
use storysizer_core::prompts::{default_baseline_tools, PromptSet};
use storysizer_core::store::{Clock, FixedClock};

pub const PIZZA_STORY: &str = "I want to order a gourmet Margherita pizza in 20 minutes.";

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn pizza_dir() -> PathBuf {
    fixtures_dir().join("pizza")
}

pub fn pizza_questions_text() -> String {
    std::fs::read_to_string(pizza_dir().join("questions.txt")).unwrap()
}

pub fn pizza_planner_csv() -> String {
    std::fs::read_to_string(pizza_dir().join("planner.csv")).unwrap()
}

pub fn clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock::epoch())
}

/// Both prompts the default configuration sends for `PIZZA_STORY` on an empty
/// inventory, in call order.
pub fn pizza_prompts() -> (String, String) {
    let prompts = PromptSet::default();
    let story = UserStory::new("S00001".into(), PIZZA_STORY, FixedClock::epoch().0).unwrap();
    let q_prompt = prompts.render_question_prompt(&story, 6, None).unwrap();
    let mut questions = vec![PIZZA_STORY.to_string()];
    questions.extend(parse_question_list(&pizza_questions_text()).unwrap().parsed);
    let p_prompt = prompts
        .render_planner_prompt(&questions, &Inventory::new(), &default_baseline_tools(), "", true)
        .unwrap();
    (q_prompt, p_prompt)
}

pub fn pizza_fixture_store() -> FixtureStore {
    let params = ModelParams::default();
    let (q_prompt, p_prompt) = pizza_prompts();
    let mut store = FixtureStore {
        metadata: FixtureMetadata {
            model_id: params.model_id.clone(),
            recorded_at: "manual".into(),
            template_versions: Some(PromptSet::default().versions()),
        },
        ..FixtureStore::default()
    };
    store.record_request(&CompletionRequest::new(q_prompt, &params), &pizza_questions_text(), false).unwrap();
    store.record_request(&CompletionRequest::new(p_prompt, &params), &pizza_planner_csv(), false).unwrap();
    store
}

pub fn pizza_session() -> Session {
    let mut session = Session::new(SessionConfig::default()).unwrap();
    session.add_story(PIZZA_STORY, FixedClock::epoch().0).unwrap();
    session
}

pub fn pizza_handle(dir: &Path) -> SessionHandle<FileStore> {
    let path = dir.join("session.json");
    SessionHandle::create(pizza_session(), FileStore::new(&path), clock()).unwrap()
}

/// Writes `actual` when UPDATE_FIXTURES is set, otherwise compares with the
/// checked-in file.
pub fn golden(path: &Path, actual: &str) {
    if std::env::var_os("UPDATE_FIXTURES").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}; rerun with UPDATE_FIXTURES=1", path.display()));
    assert_eq!(expected, actual, "{} is stale; rerun with UPDATE_FIXTURES=1", path.display());
}

/// Answers question prompts with `questions` and planner prompts with
/// `planner(prompt)`, tracking how many calls overlap.
pub struct Scripted {
    pub questions: String,
    pub planner: Box<dyn Fn(&str) -> String + Send + Sync>,
    pub delay: std::time::Duration,
    pub calls: std::sync::atomic::AtomicUsize,
    in_flight: std::sync::atomic::AtomicUsize,
    pub peak: std::sync::atomic::AtomicUsize,
}

impl Scripted {
    pub fn new(questions: &str, planner: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        Self {
            questions: questions.to_string(),
            planner: Box::new(planner),
            delay: std::time::Duration::ZERO,
            calls: Default::default(),
            in_flight: Default::default(),
            peak: Default::default(),
        }
    }

    pub fn pizza() -> Self {
        let csv = pizza_planner_csv();
        Self::new(&pizza_questions_text(), move |_| csv.clone())
    }

    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

pub fn is_planner_prompt(prompt: &str) -> bool {
    prompt.contains("AVAILABLE TOOLS:")
}

impl storysizer_core::llm::CompletionBackend for Scripted {
    fn complete(&self, request: &CompletionRequest) -> Result<String, storysizer_core::llm::BackendError> {
        use std::sync::atomic::Ordering::SeqCst;
        self.calls.fetch_add(1, SeqCst);
        let now = self.in_flight.fetch_add(1, SeqCst) + 1;
        self.peak.fetch_max(now, SeqCst);
        std::thread::sleep(self.delay);
        let out = if is_planner_prompt(&request.prompt) {
            (self.planner)(&request.prompt)
        } else {
            self.questions.clone()
        };
        self.in_flight.fetch_sub(1, SeqCst);
        Ok(out)
    }
}
