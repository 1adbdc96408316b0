//! The malformed planner output corpus and a random-bytes fuzz pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use storysizer_core::parser::{parse_planner_csv, ParseMode};

pub fn corpus() -> Vec<Value> {
    let text = std::fs::read_to_string(super::fixtures_dir().join("parser_corpus.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn check(case: &Value) -> Result<(), String> {
    let name = case["name"].as_str().unwrap();
    let input = case["input"].as_str().unwrap();
    let expect = &case["expect"];
    let lenient = parse_planner_csv(input, ParseMode::Lenient);
    let strict = parse_planner_csv(input, ParseMode::Strict);
    if let Some(kind) = expect["error"].as_str() {
        let err = lenient.err().ok_or(format!("{name}: expected {kind}"))?;
        let json = serde_json::to_value(&err).unwrap();
        if json["error"] != kind || (expect.get("line").is_some() && json["line"] != expect["line"]) {
            return Err(format!("{name}: expected {expect}, got {json}"));
        }
        if strict.is_ok() {
            return Err(format!("{name}: strict mode accepted it"));
        }
        return Ok(());
    }
    let report = lenient.map_err(|e| format!("{name}: {e}"))?;
    let rows = expect["rows"].as_u64().unwrap() as usize;
    let skips: Vec<Value> = report.skipped.iter().map(|s| serde_json::to_value(&s.reason).unwrap()["reason"].clone()).collect();
    if report.parsed.len() != rows || skips != *expect["skips"].as_array().unwrap() {
        return Err(format!("{name}: got {} rows, skips {skips:?}; expected {expect}", report.parsed.len()));
    }
    if report.strict_ok != skips.is_empty() || strict.is_ok() != skips.is_empty() {
        return Err(format!("{name}: strict mode disagrees with skips"));
    }
    Ok(())
}

/// Every corpus case; returns the failure messages.
pub fn corpus_failures() -> Vec<String> {
    let cases = corpus();
    assert!(cases.len() >= 12);
    cases.iter().filter_map(|c| check(c).err()).collect()
}

/// 10,000 random byte strings in both modes: no panics, and `Ok` always
/// carries at least one row.
pub fn check_random_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let len = rng.random_range(0..256);
        let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let text = String::from_utf8_lossy(&bytes);
        for mode in [ParseMode::Lenient, ParseMode::Strict] {
            if let Ok(report) = parse_planner_csv(&text, mode) {
                assert!(!report.parsed.is_empty());
            }
        }
    }
}
