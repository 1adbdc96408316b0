//! Brute-force duplicate detection with its own tokenizer, and the random
//! corpora it is compared on.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storysizer_core::dedup::{find_duplicates, similarity, Threshold};
use storysizer_core::domain::{normalize_task_name, Inventory, Task, TaskKind, TaskStatus};
use storysizer_core::parser::{parse_planner_csv, raw_to_task, ParseMode};

const STOP: &[&str] = &["a", "an", "the", "to", "of", "for", "and", "or", "with", "that", "on", "in", "by"];

pub const THRESHOLDS: [f64; 3] = [0.5, 0.8, 1.0];
pub const CORPORA: u64 = 100;

pub fn words(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase).chain([' ']) {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            if !STOP.contains(&cur.as_str()) {
                out.insert(cur.clone());
            }
            cur.clear();
        }
    }
    out
}

/// (intersection, union) sizes.
pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> (usize, usize) {
    (a.intersection(b).count(), a.union(b).count())
}

struct Sets {
    name: HashSet<String>,
    description: HashSet<String>,
}

fn sets(t: &Task) -> Sets {
    Sets {
        name: t.name.split('_').filter(|s| !s.is_empty()).map(String::from).collect(),
        description: words(&t.description),
    }
}

fn ratio((num, den): (usize, usize)) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn pair_score(a: &Sets, b: &Sets) -> f64 {
    ratio(jaccard(&a.name, &b.name)).max(ratio(jaccard(&a.description, &b.description)))
}

pub fn oracle_score(a: &Task, b: &Task) -> f64 {
    pair_score(&sets(a), &sets(b))
}

/// (new id, existing id, score bits)
pub type Pair = (String, String, u64);

pub fn oracle(batch: &[Task], inventory: &Inventory, threshold: f64) -> Vec<Pair> {
    let stored: Vec<&Task> = inventory.iter().filter(|x| !batch.iter().any(|b| b.id == x.id)).collect();
    let batch_sets: Vec<Sets> = batch.iter().map(sets).collect();
    let stored_sets: Vec<Sets> = stored.iter().map(|t| sets(t)).collect();
    let mut out = Vec::new();
    for (i, t) in batch.iter().enumerate() {
        let earlier = batch[..i].iter().zip(&batch_sets[..i]);
        for (other, other_sets) in earlier.chain(stored.iter().copied().zip(&stored_sets)) {
            if other.kind != t.kind {
                continue;
            }
            let s = pair_score(&batch_sets[i], other_sets);
            if s >= threshold {
                out.push((t.id.to_string(), other.id.to_string(), s.to_bits()));
            }
        }
    }
    out.sort_by(|a, b| f64::from_bits(b.2).total_cmp(&f64::from_bits(a.2)).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    out
}

pub fn actual(batch: &[Task], inventory: &Inventory, threshold: f64) -> Vec<Pair> {
    find_duplicates(batch, inventory, Threshold::new(threshold).unwrap())
        .into_iter()
        .map(|c| (c.new_task_id.to_string(), c.existing_task_id.to_string(), c.score.to_bits()))
        .collect()
}

pub fn pizza_batch() -> Vec<Task> {
    let report = parse_planner_csv(&super::pizza_planner_csv(), ParseMode::Strict).unwrap();
    report
        .parsed
        .iter()
        .enumerate()
        .map(|(i, raw)| raw_to_task(raw, format!("T{:05}", i + 1).as_str().into(), vec![], "S00001".into()).unwrap())
        .collect()
}

const NAME_WORDS: &[&str] = &["pizza", "menu", "order", "filter", "delivery", "time", "show", "list", "user", "rating"];
const DESC_WORDS: &[&str] = &[
    "pizza", "menu", "order", "filter", "delivery", "time", "show", "the", "a", "to", "of", "for", "Pizza", "ORDER",
    "20", "minutes", "user's", "real-time", "fast", "and",
];

fn random_task(rng: &mut ChaCha8Rng, id: String) -> Task {
    let kind = *TaskKind::ALL.choose(rng).unwrap();
    let n = rng.random_range(1..=3);
    let raw: Vec<&str> = (0..n).map(|_| *NAME_WORDS.choose(rng).unwrap()).collect();
    let raw_name = raw.join("_");
    let d = rng.random_range(1..=7);
    let mut description = String::new();
    for k in 0..d {
        if k > 0 {
            description.push_str([" ", ", ", " - "].choose(rng).unwrap());
        }
        description.push_str(DESC_WORDS.choose(rng).unwrap());
    }
    Task {
        id: id.as_str().into(),
        kind,
        name: normalize_task_name(&raw_name).unwrap(),
        raw_name,
        description,
        origin_question_ids: vec![],
        origin_story_id: "S00001".into(),
        status: TaskStatus::Pending,
    }
}

/// A batch of 1..=120 tasks and an inventory of up to 80.
pub fn random_corpus(seed: u64) -> (Vec<Task>, Inventory) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inv = Inventory::new();
    for i in 0..rng.random_range(0..80) {
        let mut t = random_task(&mut rng, format!("T{:05}", i + 1));
        t.status = TaskStatus::Accepted;
        let _ = inv.insert(t);
    }
    let batch = (0..rng.random_range(1..=120)).map(|i| random_task(&mut rng, format!("T{:05}", 100 + i))).collect();
    (batch, inv)
}

pub fn check_pizza_batch() {
    let batch = pizza_batch();
    assert_eq!(batch.len(), 43);
    for t in THRESHOLDS.into_iter().chain([0.2, 0.3]) {
        assert_eq!(actual(&batch, &Inventory::new(), t), oracle(&batch, &Inventory::new(), t), "threshold {t}");
    }
    let mut inv = Inventory::new();
    for t in &batch[..20] {
        inv.insert(t.clone()).unwrap();
    }
    for t in THRESHOLDS {
        assert_eq!(actual(&batch[20..], &inv, t), oracle(&batch[20..], &inv, t), "threshold {t} against inventory");
    }
}

/// Oracle equality at every threshold, and fewer pairs as the threshold rises.
pub fn check_random_corpora() {
    for seed in 0..CORPORA {
        let (batch, inv) = random_corpus(seed);
        let mut previous: Option<HashSet<(String, String)>> = None;
        for t in THRESHOLDS {
            let got = actual(&batch, &inv, t);
            assert_eq!(got, oracle(&batch, &inv, t), "seed {seed} threshold {t}");
            let pairs: HashSet<_> = got.into_iter().map(|(a, b, _)| (a, b)).collect();
            if let Some(looser) = &previous {
                assert!(pairs.is_subset(looser), "seed {seed}: raising the threshold added pairs");
            }
            previous = Some(pairs);
        }
    }
}

/// Reflexivity on every task, symmetry and range on sampled pairs.
pub fn check_symmetry() {
    for seed in 0..CORPORA {
        let (batch, inv) = random_corpus(seed);
        let all: Vec<&Task> = batch.iter().chain(inv.iter()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for a in &all {
            assert_eq!(similarity(a, a), 1.0);
        }
        for _ in 0..2_000 {
            let (a, b) = (all.choose(&mut rng).unwrap(), all.choose(&mut rng).unwrap());
            let s = similarity(a, b);
            assert_eq!(s, similarity(b, a));
            assert!((0.0..=1.0).contains(&s));
        }
    }
}
