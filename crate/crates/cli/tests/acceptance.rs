//! One PASS/FAIL line per acceptance criterion. Runs offline against the
//! checked-in fixtures; exits nonzero if anything fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::*;
use serde_json::Value;
use storysizer_core::domain::TaskKind;
use storysizer_core::engine::Session;
use storysizer_core::parser::parse_question_list;
use storysizer_core::report::{build_report, ReportOptions};

fn cli(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_storysizer"))
        .args(args)
        .current_dir(dir)
        .env_remove("STORYSIZER_SESSION")
        .env("STORYSIZER_NOW", "2024-01-01T00:00:00Z")
        .output()
        .unwrap();
    assert!(out.status.success(), "storysizer {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// init, run, export, mark every row accept, apply. Returns the session path.
fn pizza_flow(dir: &Path) -> std::path::PathBuf {
    let replay = pizza_dir().join("replay.json");
    let backend = format!("fixture:{}", replay.display());
    cli(dir, &["init", "--session", "s.json", "--story", PIZZA_STORY, "--backend", &backend]);
    cli(dir, &["run", "--session", "s.json"]);
    cli(dir, &["review", "export", "--session", "s.json", "--out", "review.csv"]);
    let mut reader = csv::Reader::from_path(dir.join("review.csv")).unwrap();
    let mut writer = csv::Writer::from_path(dir.join("edited.csv")).unwrap();
    writer.write_record(reader.headers().unwrap()).unwrap();
    for row in reader.records() {
        let mut fields: Vec<String> = row.unwrap().iter().map(String::from).collect();
        fields[4] = "accept".into();
        writer.write_record(&fields).unwrap();
    }
    writer.flush().unwrap();
    drop(writer);
    cli(dir, &["review", "apply", "--session", "s.json", "--in", "edited.csv"]);
    dir.join("s.json")
}

fn pizza_replay() {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let path = pizza_flow(dir.path());
    let json: Value = serde_json::from_str(&cli(dir.path(), &["report", "--session", "s.json", "--format", "json"])).unwrap();
    let md = cli(dir.path(), &["report", "--session", "s.json"]);
    let elapsed = started.elapsed();

    let counts = &json["counts"];
    assert_eq!((&counts["Algorithm"], &counts["DataSource"], &counts["UiWidget"]), (&22.into(), &11.into(), &10.into()));
    assert_eq!(json["include_agent_ui"], true);
    assert!(md.contains("| 11 | 22 | 11 |"), "summary row missing:\n{md}");
    let report = build_report(&Session::load(&path).unwrap(), ReportOptions { include_agent_ui: true, baseline: None });
    assert_eq!(report.reported(TaskKind::UiWidget), 11);
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
}

fn question_parsing() {
    let text = pizza_questions_text();
    let expected: Vec<&str> =
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| l.split_once(". ").unwrap().1.trim()).collect();
    assert_eq!(expected.len(), 6);
    let parsed = parse_question_list(&text).unwrap().parsed;
    assert_eq!(parsed.iter().map(|q| q.trim()).collect::<Vec<_>>(), expected);
}

fn baseline_table() {
    let dir = tempfile::tempdir().unwrap();
    pizza_flow(dir.path());
    let json: Value = serde_json::from_str(&cli(
        dir.path(),
        &["report", "--session", "s.json", "--format", "json", "--baseline", "2,1,4"],
    ))
    .unwrap();
    let rows = json["baseline"]["rows"].as_array().unwrap();
    let triple: Vec<(String, i64, i64, i64)> = rows
        .iter()
        .map(|r| {
            let b = r["baseline"].as_i64().unwrap();
            let p = r["pipeline"].as_i64().unwrap();
            assert_eq!(r["delta"].as_i64().unwrap(), p - b);
            (r["kind"].as_str().unwrap().to_string(), b, p, r["delta"].as_i64().unwrap())
        })
        .collect();
    assert_eq!(
        triple,
        vec![
            ("DataSource".into(), 2, 11, 9),
            ("Algorithm".into(), 1, 22, 21),
            ("UiWidget".into(), 4, 11, 7),
        ]
    );
    let md = cli(dir.path(), &["report", "--session", "s.json", "--baseline", "2,1,4"]);
    for line in ["| Data Sources | 2 | 11 | +9 |", "| Algorithms | 1 | 22 | +21 |", "| User Interfaces | 4 | 11 | +7 |"] {
        assert!(md.contains(line), "missing {line:?}");
    }
}

fn prompt_goldens() {
    let (q, p) = pizza_prompts();
    let read = |name: &str| std::fs::read_to_string(fixtures_dir().join("prompts").join(name)).unwrap();
    assert_eq!(q, read("question_gen.golden.txt"));
    assert_eq!(p, read("planner.golden.txt"));
    assert!(q.contains("You will generate 6 related questions to the user request."));
    assert!(p.contains("Your answer should be only a csv list with fields task type, function call name and task description"));
}

fn dedup_oracle() {
    oracle::check_pizza_batch();
    oracle::check_random_corpora();
    oracle::check_symmetry();
}

fn crash_safety() {
    crash::check_kill_points();
    crash::check_partial_write();
}

fn parser_robustness() {
    let failures = corpus::corpus_failures();
    assert!(failures.is_empty(), "{failures:#?}");
    corpus::check_random_bytes();
}

fn batch_api_equivalence() {
    review::check_batch_api_equivalence(|_| "accept");
}

const CRITERIA: [(&str, fn()); 8] = [
    ("pizza scenario replay", pizza_replay),
    ("question parsing", question_parsing),
    ("baseline table", baseline_table),
    ("prompt goldens", prompt_goldens),
    ("dedup oracle equivalence", dedup_oracle),
    ("event sourcing and crash safety", crash_safety),
    ("parser robustness", parser_robustness),
    ("batch/API equivalence", batch_api_equivalence),
];

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in CRITERIA {
        let started = Instant::now();
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(()) => println!("PASS {name} ({:.2?})", started.elapsed()),
            Err(panic) => {
                failed += 1;
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {name}: {}", msg.lines().next().unwrap_or(""));
            }
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
