//! Kill-point harness: a store that fails chosen writes, and a fixed script of
//! session operations to replay around each failure.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use storysizer_core::engine::{
    DecisionInput, EngineError, FileStore, FinalConfirmation, Persist, RunOptions, Session, SessionHandle, Verdict,
};
use storysizer_core::prompts::PromptSet;
use storysizer_core::store::temp_path;

use super::{clock, pizza_session, Scripted};

#[derive(Clone, Copy, Debug)]
enum Kill {
    BeforeWrite,
    AfterWrite,
}

/// Counts writes and fails the `at`-th one, either before or after it lands.
struct CrashStore {
    inner: FileStore,
    writes: Arc<Mutex<usize>>,
    at: Option<(usize, Kill)>,
}

impl Persist for CrashStore {
    fn persist(&mut self, session: &Session) -> Result<(), EngineError> {
        let mut n = self.writes.lock().unwrap();
        *n += 1;
        match self.at {
            Some((k, Kill::BeforeWrite)) if k == *n => Err(EngineError::Persist("killed".into())),
            Some((k, Kill::AfterWrite)) if k == *n => {
                self.inner.persist(session)?;
                Err(EngineError::Persist("killed".into()))
            }
            _ => self.inner.persist(session),
        }
    }
}

type Step = fn(&mut dyn Driver) -> Result<(), EngineError>;

trait Driver {
    fn run(&mut self, story: &str, n: usize) -> Result<(), EngineError>;
    fn decide_all(&mut self, verdict: Verdict) -> Result<(), EngineError>;
    fn add_story(&mut self, text: &str) -> Result<(), EngineError>;
    fn finalize(&mut self) -> Result<(), EngineError>;
}

impl<P: Persist> Driver for SessionHandle<P> {
    fn run(&mut self, story: &str, n: usize) -> Result<(), EngineError> {
        let backend = Scripted::pizza();
        self.run_iteration(&story.into(), &PromptSet::default(), &backend, RunOptions { n_questions: n, minimize: true })
            .map(|_| ())
    }
    fn decide_all(&mut self, verdict: Verdict) -> Result<(), EngineError> {
        let d: Vec<_> = self
            .session()
            .awaiting_iterations()
            .iter()
            .flat_map(|it| it.pending_task_ids())
            .map(|task_id| DecisionInput { task_id, verdict: verdict.clone() })
            .collect();
        SessionHandle::apply_decisions(self, d, "operator")
    }
    fn add_story(&mut self, text: &str) -> Result<(), EngineError> {
        SessionHandle::add_story(self, text).map(|_| ())
    }
    fn finalize(&mut self) -> Result<(), EngineError> {
        SessionHandle::finalize(self, &FinalConfirmation { actor: "operator".into(), expected_snapshot: None }).map(|_| ())
    }
}

const STEPS: [Step; 6] = [
    |d| d.run("S00001", 6),
    |d| d.decide_all(Verdict::Accept),
    |d| d.add_story("I want to reorder my last pizza."),
    |d| d.run("S00002", 0),
    // Same planner output again: every task collides, so reject them.
    |d| d.decide_all(Verdict::Reject),
    |d| d.finalize(),
];

fn session_path(dir: &Path) -> PathBuf {
    dir.join("session.json")
}

fn start(dir: &Path, at: Option<(usize, Kill)>) -> (SessionHandle<CrashStore>, Arc<Mutex<usize>>) {
    let writes = Arc::new(Mutex::new(0));
    let store = CrashStore { inner: FileStore::new(session_path(dir)), writes: writes.clone(), at };
    // The initial write is not a kill point; a session that never hit disk has nothing to recover.
    FileStore::new(session_path(dir)).persist(&pizza_session()).unwrap();
    (SessionHandle::attach(pizza_session(), store, clock()), writes)
}

fn clean_run() -> (String, usize) {
    let dir = tempfile::tempdir().unwrap();
    let (mut h, writes) = start(dir.path(), None);
    for step in STEPS {
        step(&mut h).unwrap();
    }
    let n = *writes.lock().unwrap();
    (std::fs::read_to_string(session_path(dir.path())).unwrap(), n)
}

/// Kills the writer before and after each durable write of `STEPS`, resumes
/// from what reached disk and compares with an uninterrupted run.
pub fn check_kill_points() {
    let (expected, total_writes) = clean_run();
    assert_eq!(total_writes, STEPS.len());
    for k in 1..=total_writes {
        for kill in [Kill::BeforeWrite, Kill::AfterWrite] {
            let dir = tempfile::tempdir().unwrap();
            let (mut h, _) = start(dir.path(), Some((k, kill)));
            let mut acknowledged = h.session().clone();
            let mut failed_step = None;
            for (i, step) in STEPS.iter().enumerate() {
                match step(&mut h) {
                    Ok(()) => acknowledged = h.session().clone(),
                    Err(e) => {
                        assert!(matches!(e, EngineError::Persist(_)), "{e:?}");
                        assert_eq!(h.session(), &acknowledged, "in-memory state must not run ahead of disk");
                        failed_step = Some(i);
                        break;
                    }
                }
            }
            let failed_step = failed_step.expect("kill point reached");
            drop(h);

            // The file always holds a complete session: the last acknowledged
            // one, or the attempted one when the kill came after the rename.
            let recovered = Session::load(&session_path(dir.path())).unwrap();
            let resume_from = match kill {
                Kill::BeforeWrite => {
                    assert_eq!(recovered, acknowledged, "k={k}");
                    failed_step
                }
                Kill::AfterWrite => {
                    assert_ne!(recovered, acknowledged, "k={k}");
                    failed_step + 1
                }
            };
            assert_eq!(recovered.replay_inventory().unwrap(), recovered.inventory, "k={k}");
            let mut h = SessionHandle::open(&session_path(dir.path()), clock()).unwrap();
            for step in &STEPS[resume_from..] {
                step(&mut h).unwrap();
            }
            let text = std::fs::read_to_string(session_path(dir.path())).unwrap();
            assert_eq!(text, expected, "k={k} {kill:?}: resumed run diverged");
            let done = Session::load(&session_path(dir.path())).unwrap();
            assert_eq!(done.inventory.len(), 43);
            assert_eq!(done.replay_inventory().unwrap(), done.inventory);
        }
    }
}

pub fn check_partial_write() {
    let dir = tempfile::tempdir().unwrap();
    let (mut h, _) = start(dir.path(), None);
    STEPS[0](&mut h).unwrap();
    let before = std::fs::read_to_string(session_path(dir.path())).unwrap();
    // A writer that died mid-write leaves only a truncated temp file behind.
    let next = {
        let mut s = h.session().clone();
        s.add_story("late story", storysizer_core::store::FixedClock::epoch().0).unwrap();
        s.to_json()
    };
    std::fs::write(temp_path(&session_path(dir.path())), &next.as_bytes()[..next.len() / 2]).unwrap();
    let loaded = Session::load(&session_path(dir.path())).unwrap();
    assert_eq!(loaded.to_json(), before);

    // A truncated session file itself is reported, not half-loaded.
    std::fs::write(session_path(dir.path()), &before.as_bytes()[..before.len() / 2]).unwrap();
    assert!(matches!(Session::load(&session_path(dir.path())), Err(EngineError::Corrupt(_))));
}
