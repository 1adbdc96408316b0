use std::fmt::Display;
use std::path::Path;
use std::sync::Arc;

use serde_json::json;
use storysizer_core::dedup::Threshold;
use storysizer_core::domain::StoryId;
use storysizer_core::engine::{
    EngineError, FileStore, FinalConfirmation, RunOptions, Session, SessionConfig, SessionHandle,
};
use storysizer_core::llm::{BackendDescriptor, BackendError, CompletionBackend, FixtureStore, LiveConfig};
use storysizer_core::parser::ParseMode;
use storysizer_core::prompts::PromptSet;
use storysizer_core::report::{build_report, render, ReportOptions};
use storysizer_core::review::{self, ReviewError, ServeError, ServeOptions};
use storysizer_core::store::{write_atomic, Clock, FixedClock, SessionLock, SystemClock};

use crate::{Command, FixturesCommand, InitArgs, ReportArgs, ReviewCommand, RunArgs};

/// Overrides the provider URL used by `record:` backends.
const BASE_URL_ENV: &str = "STORYSIZER_BASE_URL";

pub struct CliError {
    code: String,
    message: String,
    pub exit: u8,
}

impl CliError {
    fn new(code: &str, message: impl Display) -> Self {
        Self { code: code.to_string(), message: message.to_string(), exit: 1 }
    }

    fn invalid(message: impl Display) -> Self {
        Self { exit: 2, ..Self::new("InvalidArgument", message) }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self.code, "message": self.message }).to_string()
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let exit = if matches!(e, EngineError::InvalidConfig(_)) { 2 } else { 1 };
        Self { exit, ..Self::new(e.code(), &e) }
    }
}

impl From<ReviewError> for CliError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::Engine(inner) => inner.into(),
            ReviewError::NothingPending => Self::new("NothingPending", &e),
            ReviewError::Row { .. } => Self::new("ReviewRow", &e),
            ReviewError::File(_) => Self::new("ReviewFile", &e),
        }
    }
}

impl From<ServeError> for CliError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::PortInUse(_) => Self::new("PortInUse", &e),
            ServeError::SessionCorrupt(_) => Self::new("SessionCorrupt", &e),
            ServeError::Io(_) => Self::new("Io", &e),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        Self::new("Backend", &e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn lock(session: &Path) -> Result<SessionLock> {
    SessionLock::acquire(session).map_err(|e| match e.kind() {
        std::io::ErrorKind::AlreadyExists => CliError { exit: 3, ..CliError::new("SessionLocked", e) },
        _ => CliError::new("Io", format!("{}: {e}", session.display())),
    })
}

/// Pins every recorded timestamp (RFC 3339), for reproducible session files.
const NOW_ENV: &str = "STORYSIZER_NOW";

fn clock() -> Arc<dyn Clock> {
    match std::env::var(NOW_ENV).ok().and_then(|v| chrono::DateTime::parse_from_rfc3339(&v).ok()) {
        Some(at) => Arc::new(FixedClock(at.with_timezone(&chrono::Utc))),
        None => Arc::new(SystemClock),
    }
}

fn open(session: &Path) -> Result<SessionHandle> {
    Ok(SessionHandle::open(session, clock())?)
}

fn prompts_for(session: &Session) -> Result<PromptSet> {
    let prompts = match &session.config.prompts_dir {
        Some(dir) => PromptSet::load_dir(Path::new(dir)).map_err(|e| CliError::new("Prompt", e))?,
        None => PromptSet::default(),
    };
    if prompts.versions() != session.config.template_versions {
        log::warn!("prompt templates changed since the session was created; new iterations record the new versions");
    }
    Ok(prompts)
}

fn live_config(session: &Session) -> LiveConfig {
    let mut live = session.config.live.clone();
    if let Ok(url) = std::env::var(BASE_URL_ENV) {
        if !url.is_empty() {
            live.base_url = url;
        }
    }
    live
}

fn backend_for(session: &Session, flag: Option<BackendDescriptor>) -> Result<Box<dyn CompletionBackend>> {
    let descriptor = flag.or_else(|| session.config.backend.clone()).ok_or_else(|| {
        CliError::invalid("no backend: pass --backend live:<url>, fixture:<path> or record:<path>")
    })?;
    Ok(descriptor.open(&live_config(session))?)
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Init(args) => init(args),
        Command::AddStory { session, story } => {
            let _lock = lock(&session.session)?;
            let id = open(&session.session)?.add_story(&story)?;
            println!("{id}");
            Ok(())
        }
        Command::Run(args) => run(args),
        Command::Review(cmd) => review_cmd(cmd),
        Command::Report(args) => report(args),
        Command::Finalize { session, expect, actor } => {
            let _lock = lock(&session.session)?;
            let done = open(&session.session)?.finalize(&FinalConfirmation { actor, expected_snapshot: expect })?;
            println!("finalized: {} tasks, snapshot {}", done.inventory_size, done.snapshot_hash);
            Ok(())
        }
        Command::Fixtures(FixturesCommand::Record { session, out, force }) => record(&session.session, &out, force),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn init(args: InitArgs) -> Result<()> {
    let path = args.session.session;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::new("Io", format!("{}: {e}", parent.display())))?;
    }
    let _lock = lock(&path)?;
    if path.exists() && !args.force {
        return Err(CliError::new("SessionExists", format!("{} already exists; pass --force to replace it", path.display())));
    }
    let threshold = Threshold::new(args.threshold).map_err(CliError::invalid)?;
    let mut config = SessionConfig { n_questions: args.n, threshold, ..SessionConfig::default() };
    config.minimize = !args.no_minimize;
    config.dedup = !args.no_dedup;
    if args.strict {
        config.parse_mode = ParseMode::Strict;
    }
    if let Some(file) = &args.context {
        config.context = read_text(file)?.trim_end().to_string();
    }
    if let Some(file) = &args.catalog {
        config.catalog = read_text(file)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
    }
    if let Some(dir) = &args.prompts {
        let set = PromptSet::load_dir(dir).map_err(CliError::invalid)?;
        config.template_versions = set.versions();
        config.prompts_dir = Some(dir.display().to_string());
    }
    if let Some(model) = args.model {
        config.model.model_id = model;
    }
    config.backend = args.backend;

    let mut session = Session::new(config)?;
    let now = clock().now();
    for story in &args.stories {
        session.add_story(story, now).map_err(|e| CliError { exit: 2, ..CliError::from(e) })?;
    }
    let handle = SessionHandle::create(session, FileStore::new(&path), clock())?;
    let ids: Vec<String> = handle.session().stories.iter().map(|s| s.id.to_string()).collect();
    println!("created {} with stories {}", path.display(), ids.join(", "));
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let path = args.session.session;
    let _lock = lock(&path)?;
    let mut handle = open(&path)?;
    let prompts = prompts_for(handle.session())?;
    let backend = backend_for(handle.session(), args.backend)?;
    let mut options = RunOptions::from_session(handle.session());
    if let Some(n) = args.n {
        options.n_questions = n;
    }
    if args.no_minimize {
        options.minimize = false;
    }
    let stories: Vec<StoryId> = if args.stories.is_empty() {
        handle.session().unplanned_stories()
    } else {
        args.stories.iter().map(|s| StoryId(s.clone())).collect()
    };
    if stories.is_empty() {
        return Err(CliError::new("NothingToRun", "every story has been planned; pass --story to plan one again"));
    }

    let results = handle.run_iterations(&stories, &prompts, backend.as_ref(), options);
    let mut first_error = None;
    for (story, result) in stories.iter().zip(results) {
        match result {
            Ok(id) => {
                let it = handle.session().iteration(&id).expect("committed iteration");
                println!(
                    "{id} {story}: {} questions, {} tasks pending, {} duplicate candidates, {} rows skipped",
                    it.question_ids.len(),
                    it.tasks.len(),
                    it.duplicate_candidates.len(),
                    it.skipped_rows.len()
                );
                for w in &it.warnings {
                    log::warn!("{id}: {w}");
                }
            }
            Err(e) => {
                let err = CliError::from(e);
                if first_error.is_some() {
                    eprintln!("{}", err.to_json());
                } else {
                    first_error = Some(err);
                }
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn review_cmd(cmd: ReviewCommand) -> Result<()> {
    match cmd {
        ReviewCommand::Serve { session, port, host, backend } => {
            let _lock = lock(&session.session)?;
            let snapshot = Session::load(&session.session).map_err(|e| CliError::new("SessionCorrupt", e))?;
            let prompts = prompts_for(&snapshot)?;
            let backend = match backend.or_else(|| snapshot.config.backend.clone()) {
                Some(d) => Some(d.open(&live_config(&snapshot))?),
                None => None,
            };
            let handle = review::serve(
                &session.session,
                ServeOptions { host, port, prompts, backend, clock: clock(), stop_on_interrupt: true },
            )?;
            println!("review service on {}", handle.base_url());
            handle.wait();
            Ok(())
        }
        ReviewCommand::Export { session, out } => {
            let _lock = lock(&session.session)?;
            let s = Session::load(&session.session)?;
            let n = review::export_pending(&s, &out)?;
            println!("exported {n} pending tasks to {}", out.display());
            Ok(())
        }
        ReviewCommand::Apply { session, input, actor } => {
            let _lock = lock(&session.session)?;
            let mut handle = open(&session.session)?;
            let n = review::apply_pending(&mut handle, &input, &actor)?;
            println!("applied {n} decisions; inventory holds {} tasks", handle.session().inventory.len());
            Ok(())
        }
    }
}

fn report(args: ReportArgs) -> Result<()> {
    let _lock = lock(&args.session.session)?;
    let session = Session::load(&args.session.session)?;
    let report = build_report(&session, ReportOptions { include_agent_ui: !args.no_agent_ui, baseline: args.baseline });
    let text = render(&report, args.format);
    match args.out {
        Some(out) => write_atomic(&out, text.as_bytes())
            .map_err(|e| CliError::new("Io", format!("{}: {e}", out.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn record(session: &Path, out: &Path, force: bool) -> Result<()> {
    let _lock = lock(session)?;
    let s = Session::load(session)?;
    let mut store = if out.exists() { FixtureStore::load(out)? } else { FixtureStore::default() };
    store.metadata.model_id = s.config.model.model_id.clone();
    store.metadata.template_versions = Some(s.config.template_versions.clone());
    store.metadata.recorded_at = clock().now().to_rfc3339();
    let mut n = 0;
    for it in &s.iterations {
        for ex in &it.exchanges {
            store.record(&ex.request_key, &ex.response, force)?;
            n += 1;
        }
    }
    store.save(out)?;
    println!("recorded {n} exchanges; {} entries in {}", store.len(), out.display());
    Ok(())
}
