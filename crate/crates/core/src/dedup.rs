//! Lexical near-duplicate detection between planner tasks.
//!
//! Similarity is the larger of two token-set Jaccard scores: one over the
//! normalized name split on underscores, one over the lowercased description
//! with a fixed stopword list removed. Candidates are only flagged, never
//! merged; merging is a human verdict.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Inventory, Task, TaskId, TaskKind};

/// Stopwords removed from descriptions before scoring (version 1).
pub const STOPWORDS: [&str; 13] =
    ["a", "an", "the", "to", "of", "for", "and", "or", "with", "that", "on", "in", "by"];

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("similarity threshold must be in (0, 1], got {0}")]
pub struct InvalidThreshold(pub f64);

/// A similarity threshold in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(value: f64) -> Result<Self, InvalidThreshold> {
        if value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(InvalidThreshold(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self(DEFAULT_THRESHOLD)
    }
}

impl TryFrom<f64> for Threshold {
    type Error = InvalidThreshold;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchBasis {
    Name,
    Description,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateCandidate {
    pub new_task_id: TaskId,
    pub existing_task_id: TaskId,
    pub score: f64,
    pub basis: MatchBasis,
}

/// Sorted, deduplicated token lists for one task.
#[derive(Debug, Clone)]
struct Tokens {
    name: Vec<String>,
    description: Vec<String>,
}

fn name_tokens(name: &str) -> Vec<String> {
    let set: BTreeSet<String> = name.split('_').filter(|t| !t.is_empty()).map(str::to_string).collect();
    set.into_iter().collect()
}

fn description_tokens(description: &str) -> Vec<String> {
    let lower = description.to_lowercase();
    let set: BTreeSet<String> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect();
    set.into_iter().collect()
}

impl Tokens {
    fn of(task: &Task) -> Self {
        Self { name: name_tokens(&task.name), description: description_tokens(&task.description) }
    }
}

/// Jaccard index of two sorted, deduplicated slices. Two empty sets score 0.
fn sorted_jaccard(a: &[String], b: &[String]) -> f64 {
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - common;
    if union == 0 {
        0.0
    } else {
        common as f64 / union as f64
    }
}

fn score_tokens(a: &Tokens, b: &Tokens) -> (f64, MatchBasis) {
    let by_name = sorted_jaccard(&a.name, &b.name);
    let by_description = sorted_jaccard(&a.description, &b.description);
    match by_name.total_cmp(&by_description) {
        Ordering::Greater => (by_name, MatchBasis::Name),
        Ordering::Less => (by_description, MatchBasis::Description),
        Ordering::Equal => (by_name, MatchBasis::Both),
    }
}

pub fn similarity_with_basis(a: &Task, b: &Task) -> (f64, MatchBasis) {
    score_tokens(&Tokens::of(a), &Tokens::of(b))
}

/// Similarity in `[0, 1]`; symmetric, and 1.0 for a task against itself.
pub fn similarity(a: &Task, b: &Task) -> f64 {
    similarity_with_basis(a, b).0
}

/// Description-only score, exposed for diagnostics.
pub fn description_similarity(a: &str, b: &str) -> f64 {
    sorted_jaccard(&description_tokens(a), &description_tokens(b))
}

/// Flags same-kind pairs scoring at or above `threshold`.
///
/// Pairs inside the batch are reported once, with the later task as
/// `new_task_id`. Batch tasks are also compared against every inventory task.
/// Output is sorted by score descending, then by the two ids.
pub fn find_duplicates(batch: &[Task], inventory: &Inventory, threshold: Threshold) -> Vec<DuplicateCandidate> {
    if batch.is_empty() {
        return Vec::new();
    }
    let batch_ids: BTreeSet<&TaskId> = batch.iter().map(|t| &t.id).collect();
    let pool: Vec<&Task> = batch
        .iter()
        .chain(inventory.iter().filter(|t| !batch_ids.contains(&t.id)))
        .collect();
    let tokens: Vec<Tokens> = pool.iter().map(|t| Tokens::of(t)).collect();

    // Any pair above a positive threshold shares at least one token.
    let mut postings: HashMap<(TaskKind, u8, &str), Vec<usize>> = HashMap::new();
    for (idx, (task, tok)) in pool.iter().zip(&tokens).enumerate() {
        for t in &tok.name {
            postings.entry((task.kind, 0, t.as_str())).or_default().push(idx);
        }
        for t in &tok.description {
            postings.entry((task.kind, 1, t.as_str())).or_default().push(idx);
        }
    }

    let mut out = Vec::new();
    for (i, task) in batch.iter().enumerate() {
        let mut partners = BTreeSet::new();
        let keys = tokens[i]
            .name
            .iter()
            .map(|t| (task.kind, 0u8, t.as_str()))
            .chain(tokens[i].description.iter().map(|t| (task.kind, 1u8, t.as_str())));
        for key in keys {
            for &j in postings.get(&key).into_iter().flatten() {
                // Batch/batch pairs are visited from their later member only.
                if j < i || j >= batch.len() {
                    partners.insert(j);
                }
            }
        }
        for j in partners {
            let other = pool[j];
            if other.id == task.id {
                continue;
            }
            let (score, basis) = score_tokens(&tokens[i], &tokens[j]);
            if score >= threshold.get() {
                out.push(DuplicateCandidate {
                    new_task_id: task.id.clone(),
                    existing_task_id: other.id.clone(),
                    score,
                    basis,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.new_task_id.cmp(&b.new_task_id))
            .then_with(|| a.existing_task_id.cmp(&b.existing_task_id))
    });
    out
}
