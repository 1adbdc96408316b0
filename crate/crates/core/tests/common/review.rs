//! Session setup and HTTP helpers for the review service, and the check that
//! the CSV and HTTP review paths produce the same session file.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use storysizer_core::engine::{RunOptions, SessionHandle};
use storysizer_core::llm::{FixtureBackend, FixtureStore};
use storysizer_core::prompts::PromptSet;
use storysizer_core::review::{apply_pending, export_pending, serve, ServeOptions, ServiceHandle};

use super::{clock, pizza_dir, pizza_handle};

pub fn planned_session(dir: &Path) -> PathBuf {
    let mut handle = pizza_handle(dir);
    let backend = FixtureBackend::new(FixtureStore::load(&pizza_dir().join("replay.json")).unwrap());
    let opts = RunOptions::from_session(handle.session());
    handle.run_iteration(&"S00001".into(), &PromptSet::default(), &backend, opts).unwrap();
    dir.join("session.json")
}

pub fn start(path: &Path) -> ServiceHandle {
    serve(path, ServeOptions { clock: clock(), ..ServeOptions::default() }).unwrap()
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub fn get(svc: &ServiceHandle, path: &str) -> (u16, Value) {
    let mut r = agent().get(&format!("{}{path}", svc.base_url())).call().unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap_or(Value::Null))
}

pub fn post(svc: &ServiceHandle, path: &str, body: &Value, key: Option<&str>) -> (u16, Value) {
    let mut req = agent().post(&format!("{}{path}", svc.base_url()));
    if let Some(k) = key {
        req = req.header("Idempotency-Key", k);
    }
    let mut r = req.send_json(body).unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap_or(Value::Null))
}

/// Row `i` (1-based) gets one of accept, reject, edit or merge.
pub fn mixed_verdict(i: usize) -> &'static str {
    match i % 4 {
        0 => "reject",
        1 => "accept",
        2 => "edit",
        _ => "merge",
    }
}

/// Reviews the 43 pizza tasks once through an edited CSV file and once through
/// POST /decisions and compares the two session files byte for byte. Merges
/// target T00001, so `verdict(1)` must be accept.
pub fn check_batch_api_equivalence(verdict: fn(usize) -> &'static str) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let path_a = planned_session(a.path());
    let path_b = planned_session(b.path());

    let review = a.path().join("review.csv");
    let mut handle = SessionHandle::open(&path_a, clock()).unwrap();
    assert_eq!(export_pending(handle.session(), &review).unwrap(), 43);
    let mut reader = csv::Reader::from_path(&review).unwrap();
    let mut writer = csv::Writer::from_path(a.path().join("edited.csv")).unwrap();
    writer.write_record(reader.headers().unwrap()).unwrap();
    let mut api = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.unwrap();
        let i = i + 1;
        let mut fields: Vec<String> = row.iter().map(String::from).collect();
        fields[4] = verdict(i).into();
        let id = fields[0].clone();
        match verdict(i) {
            "edit" => {
                fields[2] = format!("edited_{i}");
                fields[3] = format!("Edited description {i}");
                api.push(json!({"task_id": id, "verdict": "edit",
                    "payload": {"kind": fields[1], "name": fields[2], "description": fields[3]}}));
            }
            "merge" => {
                fields[5] = "T00001".into();
                api.push(json!({"task_id": id, "verdict": "merge", "payload": {"into": "T00001"}}));
            }
            v => api.push(json!({"task_id": id, "verdict": v})),
        }
        writer.write_record(&fields).unwrap();
    }
    writer.flush().unwrap();
    drop(writer);
    assert_eq!(apply_pending(&mut handle, &a.path().join("edited.csv"), "operator").unwrap(), 43);

    let svc = start(&path_b);
    assert_eq!(post(&svc, "/decisions", &json!(api), Some("batch-1")).0, 200);
    drop(svc);

    assert_eq!(std::fs::read_to_string(&path_a).unwrap(), std::fs::read_to_string(&path_b).unwrap());
}
