//! Loopback HTTP+JSON API over one session file.
//!
//! Reads are served from an immutable snapshot; every mutation goes through
//! the session handle under a single writer lock, then republishes the
//! snapshot. Mutating endpoints honor an `Idempotency-Key` header.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{pending_views, DEFAULT_ACTOR};
use crate::domain::{IterationId, StoryId, TaskKind};
use crate::engine::{
    DecisionInput, EngineError, FileStore, FinalConfirmation, IterationStatus, RunOptions, Session,
    SessionHandle,
};
use crate::llm::CompletionBackend;
use crate::prompts::PromptSet;
use crate::report::{build_report, render, ReportFormat, ReportOptions};
use crate::store::{Clock, SystemClock};

pub const API_BASE: &str = "/api/v1";
const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const ACTOR_HEADER: &str = "x-actor";

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("session cannot be served: {0}")]
    SessionCorrupt(String),
    #[error("binding listener: {0}")]
    Io(#[from] std::io::Error),
}

pub struct ServeOptions {
    pub host: String,
    pub port: u16,
    pub prompts: PromptSet,
    pub backend: Option<Box<dyn CompletionBackend>>,
    pub clock: Arc<dyn Clock>,
    /// Stop gracefully on SIGINT, so the caller's cleanup still runs.
    pub stop_on_interrupt: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 0,
            prompts: PromptSet::default(),
            backend: None,
            clock: Arc::new(SystemClock),
            stop_on_interrupt: false,
        }
    }
}

struct Writer {
    handle: SessionHandle<FileStore>,
    prompts: PromptSet,
    backend: Option<Box<dyn CompletionBackend>>,
    replies: HashMap<String, (String, StatusCode, Value)>,
}

struct AppState {
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Session>>,
}

impl AppState {
    fn snapshot(&self) -> Arc<Session> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

/// Running service; stops on `shutdown` or drop.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}{API_BASE}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Loads the session, binds the listener and serves on a background thread.
/// A session that fails to load is reported before any socket is bound.
pub fn serve(session_path: &Path, options: ServeOptions) -> Result<ServiceHandle, ServeError> {
    let handle = SessionHandle::open(session_path, options.clock.clone())
        .map_err(|e| ServeError::SessionCorrupt(e.to_string()))?;
    let listener = TcpListener::bind((options.host.as_str(), options.port)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::PortInUse(options.port)
        } else {
            ServeError::Io(e)
        }
    })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;

    let state = Arc::new(AppState {
        snapshot: RwLock::new(Arc::new(handle.session().clone())),
        writer: Mutex::new(Writer { handle, prompts: options.prompts, backend: options.backend, replies: HashMap::new() }),
    });
    let app = router(state);
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let on_interrupt = options.stop_on_interrupt;
    let thread = std::thread::Builder::new().name("review-service".into()).spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("tokio listener");
            let server = axum::serve(listener, app).with_graceful_shutdown(async move {
                if on_interrupt {
                    tokio::select! {
                        _ = rx => {}
                        _ = tokio::signal::ctrl_c() => log::info!("interrupted; stopping review service"),
                    }
                } else {
                    let _ = rx.await;
                }
            });
            if let Err(e) = server.await {
                log::error!("review service stopped: {e}");
            }
        });
    })?;
    log::info!("review service listening on http://{addr}{API_BASE}");
    Ok(ServiceHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}

fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/session", get(get_session))
        .route("/iterations/{id}/pending", get(get_pending))
        .route("/iterations", post(post_iteration))
        .route("/decisions", post(post_decisions))
        .route("/report", get(get_report))
        .route("/finalize", post(post_finalize))
        .with_state(state);
    Router::new().nest(API_BASE, api)
}

fn status_of(err: &EngineError) -> StatusCode {
    use EngineError::*;
    match err {
        UnknownStory(_) | UnknownIteration(_) | UnknownTask(_) => StatusCode::NOT_FOUND,
        DoubleDecision(_) | KeyCollision { .. } | IterationAwaiting(_) | UnvalidatedIterations(_) | Finalized
        | SnapshotMismatch { .. } => StatusCode::CONFLICT,
        MergeTargetMissing { .. } | InvalidEdit { .. } | Prompt(_) | Domain(_) | InvalidConfig(_) => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        Backend { .. } | Parse { .. } => StatusCode::BAD_GATEWAY,
        Corrupt(_) | Persist(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn engine_reply(err: &EngineError) -> (StatusCode, Value) {
    (status_of(err), json!({ "error": err.code(), "message": err.to_string() }))
}

fn bad_request(message: impl Into<String>) -> (StatusCode, Value) {
    (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": "InvalidRequest", "message": message.into() }))
}

fn reply((status, body): (StatusCode, Value)) -> Response {
    (status, Json(body)).into_response()
}

fn session_summary(session: &Session) -> Value {
    let counts: serde_json::Map<String, Value> = TaskKind::ALL
        .iter()
        .map(|k| (format!("{k:?}"), json!(session.inventory.count(*k))))
        .collect();
    let iterations: Vec<Value> = session
        .iterations
        .iter()
        .map(|it| {
            json!({
                "id": it.id,
                "story_id": it.story_id,
                "status": it.status,
                "questions": it.question_ids.len(),
                "tasks": it.tasks.len(),
                "pending": it.pending_task_ids().len(),
                "duplicates_flagged": it.duplicate_candidates.len(),
                "warnings": it.warnings,
            })
        })
        .collect();
    let can_finalize = !session.is_finalized()
        && session.iterations.iter().all(|i| i.status == IterationStatus::Validated);
    json!({
        "schema_version": session.schema_version,
        "config": session.config,
        "stories": session.stories,
        "iterations": iterations,
        "counts": counts,
        "inventory_size": session.inventory.len(),
        "convergence": session.convergence_stats(),
        "finalized": session.finalization,
        "can_finalize": can_finalize,
    })
}

async fn get_session(State(state): State<Arc<AppState>>) -> Response {
    reply((StatusCode::OK, session_summary(&state.snapshot())))
}

async fn get_pending(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    match pending_views(&state.snapshot(), &IterationId(id)) {
        Ok(views) => reply((StatusCode::OK, json!(views))),
        Err(e) => reply(engine_reply(&e)),
    }
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
    agent_ui: Option<bool>,
}

async fn get_report(State(state): State<Arc<AppState>>, Query(q): Query<ReportQuery>) -> Response {
    let format = match q.format.as_deref().unwrap_or("json").parse::<ReportFormat>() {
        Ok(f) => f,
        Err(e) => return reply(bad_request(e)),
    };
    let options = ReportOptions { include_agent_ui: q.agent_ui.unwrap_or(true), baseline: None };
    let report = build_report(&state.snapshot(), options);
    match format {
        ReportFormat::Json => reply((StatusCode::OK, json!(report))),
        ReportFormat::Markdown => {
            ([(header::CONTENT_TYPE, "text/markdown; charset=utf-8")], render(&report, format)).into_response()
        }
        ReportFormat::Csv => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], render(&report, format)).into_response(),
    }
}

#[derive(Deserialize)]
struct DecisionBody {
    task_id: String,
    verdict: String,
    #[serde(default)]
    payload: Option<Value>,
}

#[derive(Deserialize)]
struct EditPayload {
    kind: String,
    name: String,
    description: String,
}

#[derive(Deserialize)]
struct MergePayload {
    into: String,
}

fn decision_from_body(body: DecisionBody) -> Result<DecisionInput, String> {
    use crate::engine::Verdict;
    let task_id = body.task_id.as_str().into();
    let payload = || body.payload.clone().ok_or_else(|| format!("verdict {} needs a payload", body.verdict));
    let verdict = match body.verdict.to_ascii_lowercase().as_str() {
        "accept" => Verdict::Accept,
        "reject" => Verdict::Reject,
        "edit" => {
            let p: EditPayload = serde_json::from_value(payload()?).map_err(|e| format!("edit payload: {e}"))?;
            let kind = TaskKind::from_label(&p.kind).map_err(|e| e.to_string())?;
            Verdict::Edit { kind, name: p.name, description: p.description }
        }
        "merge" => {
            let p: MergePayload = serde_json::from_value(payload()?).map_err(|e| format!("merge payload: {e}"))?;
            Verdict::Merge { into: p.into.as_str().into() }
        }
        other => return Err(format!("unknown verdict {other:?}")),
    };
    Ok(DecisionInput { task_id, verdict })
}

fn actor(headers: &HeaderMap) -> String {
    headers
        .get(ACTOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|v| !v.is_empty())
        .unwrap_or(DEFAULT_ACTOR)
        .to_string()
}

/// Runs `op` under the writer lock on a blocking thread, replaying the stored
/// reply when the idempotency key has been seen with the same body.
async fn mutate<F>(state: Arc<AppState>, route: &'static str, headers: &HeaderMap, body: &Bytes, op: F) -> Response
where
    F: FnOnce(&mut Writer) -> (StatusCode, Value) + Send + 'static,
{
    let key = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(|k| format!("{route}:{k}"));
    let fingerprint = hex::encode(Sha256::digest(body));
    let result = tokio::task::spawn_blocking(move || {
        let mut writer = state.writer.lock().expect("writer lock");
        if let Some(key) = &key {
            if let Some((seen, status, value)) = writer.replies.get(key) {
                return if *seen == fingerprint {
                    (*status, value.clone())
                } else {
                    bad_request("idempotency key reused with a different request body")
                };
            }
        }
        let out = op(&mut writer);
        if let Some(key) = key {
            writer.replies.insert(key, (fingerprint, out.0, out.1.clone()));
        }
        *state.snapshot.write().expect("snapshot lock") = Arc::new(writer.handle.session().clone());
        out
    })
    .await;
    match result {
        Ok(out) => reply(out),
        Err(e) => reply((StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": "Internal", "message": e.to_string() }))),
    }
}

async fn post_decisions(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let bodies: Vec<DecisionBody> = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return reply(bad_request(format!("decisions body: {e}"))),
    };
    let decisions: Result<Vec<_>, _> = bodies.into_iter().map(decision_from_body).collect();
    let decisions = match decisions {
        Ok(d) => d,
        Err(e) => return reply(bad_request(e)),
    };
    let actor = actor(&headers);
    mutate(state, "decisions", &headers, &body, move |w| {
        let n = decisions.len();
        match w.handle.apply_decisions(decisions, &actor) {
            Ok(()) => (
                StatusCode::OK,
                json!({ "applied": n, "inventory_size": w.handle.session().inventory.len() }),
            ),
            Err(e) => engine_reply(&e),
        }
    })
    .await
}

#[derive(Deserialize)]
struct IterationBody {
    story_id: String,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    minimize: Option<bool>,
}

async fn post_iteration(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let req: IterationBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return reply(bad_request(format!("iteration body: {e}"))),
    };
    mutate(state, "iterations", &headers, &body, move |w| {
        let Some(backend) = w.backend.as_deref() else {
            return (
                StatusCode::SERVICE_UNAVAILABLE,
                json!({ "error": "NoBackend", "message": "no completion backend is configured for this service" }),
            );
        };
        let defaults = RunOptions::from_session(w.handle.session());
        let options = RunOptions {
            n_questions: req.n.unwrap_or(defaults.n_questions),
            minimize: req.minimize.unwrap_or(defaults.minimize),
        };
        let story = StoryId(req.story_id);
        match w.handle.run_iteration(&story, &w.prompts, backend, options) {
            Ok(id) => {
                let it = w.handle.session().iteration(&id).expect("committed iteration");
                (
                    StatusCode::CREATED,
                    json!({ "id": id, "questions": it.question_ids.len(), "pending": it.pending_task_ids().len() }),
                )
            }
            Err(e) => engine_reply(&e),
        }
    })
    .await
}

#[derive(Deserialize, Default)]
struct FinalizeBody {
    #[serde(default)]
    actor: Option<String>,
    #[serde(default)]
    expected_snapshot: Option<String>,
}

async fn post_finalize(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let req: FinalizeBody = if body.is_empty() {
        FinalizeBody::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(b) => b,
            Err(e) => return reply(bad_request(format!("finalize body: {e}"))),
        }
    };
    let confirmation = FinalConfirmation {
        actor: req.actor.unwrap_or_else(|| actor(&headers)),
        expected_snapshot: req.expected_snapshot,
    };
    mutate(state, "finalize", &headers, &body, move |w| match w.handle.finalize(&confirmation) {
        Ok(done) => (StatusCode::OK, json!(done)),
        Err(e) => engine_reply(&e),
    })
    .await
}
