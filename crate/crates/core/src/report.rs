//! Effort reports: per-kind counts, the raw task list, an optional manual
//! baseline and the data-source scope statement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{normalize_task_name, Inventory, TaskKind};
use crate::engine::Session;

pub const AGENT_UI_NAME: &str = "llm_agent_interface";
pub const AGENT_UI_DESCRIPTION: &str = "Natural-language interface of the LLM-based AI agent";

/// Manual estimate in the order tables, algorithms, widgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Baseline {
    pub tables: u64,
    pub algorithms: u64,
    pub widgets: u64,
}

impl FromStr for Baseline {
    type Err = String;

    /// Parses `T,A,W`, e.g. `2,1,4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [t, a, w] = parts.as_slice() else {
            return Err(format!("baseline {s:?} must have three comma-separated counts T,A,W"));
        };
        let num = |v: &str| v.parse::<u64>().map_err(|_| format!("baseline count {v:?} is not a non-negative integer"));
        Ok(Self { tables: num(t)?, algorithms: num(a)?, widgets: num(w)? })
    }
}

impl Baseline {
    fn get(&self, kind: TaskKind) -> u64 {
        match kind {
            TaskKind::DataSource => self.tables,
            TaskKind::Algorithm => self.algorithms,
            TaskKind::UiWidget => self.widgets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportTask {
    pub kind: TaskKind,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeDocument {
    pub in_scope: Vec<String>,
    pub out_of_scope: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub kind: TaskKind,
    pub baseline: u64,
    pub pipeline: u64,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub baseline: Baseline,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffortReport {
    /// Stored inventory tasks per kind.
    pub counts: BTreeMap<TaskKind, u64>,
    pub include_agent_ui: bool,
    /// Tasks grouped by kind (Algorithm, Data Source, User Interface).
    pub raw_list: Vec<ReportTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<ScopeDocument>,
    pub finalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_hash: Option<String>,
    pub notes: Vec<String>,
}

/// Order in which kinds appear in summary and comparison tables.
const SUMMARY_ORDER: [TaskKind; 3] = [TaskKind::DataSource, TaskKind::Algorithm, TaskKind::UiWidget];

fn plural_label(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::DataSource => "Data Sources",
        TaskKind::Algorithm => "Algorithms",
        TaskKind::UiWidget => "User Interfaces",
    }
}

impl EffortReport {
    pub fn empty() -> Self {
        effort_summary(&Inventory::new(), false)
    }

    pub fn count(&self, kind: TaskKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    /// Count as reported: the UI count gains one when the agent UI is included.
    pub fn reported(&self, kind: TaskKind) -> u64 {
        let extra = u64::from(kind == TaskKind::UiWidget && self.include_agent_ui);
        self.count(kind) + extra
    }
}

/// Counts inventory tasks by kind. The agent interface is a reporting
/// adjustment only; it never becomes a stored task.
pub fn effort_summary(inventory: &Inventory, include_agent_ui: bool) -> EffortReport {
    let counts = TaskKind::ALL.iter().map(|k| (*k, inventory.count(*k) as u64)).collect();
    let raw_list = TaskKind::ALL
        .iter()
        .flat_map(|kind| inventory.iter().filter(move |t| t.kind == *kind))
        .map(|t| ReportTask { kind: t.kind, name: t.name.clone(), description: t.description.clone() })
        .collect();
    let mut notes = Vec::new();
    if include_agent_ui {
        notes.push(
            "The User Interfaces count includes one interface for the LLM-based agent itself; it is not a planner task."
                .to_string(),
        );
    }
    EffortReport {
        counts,
        include_agent_ui,
        raw_list,
        baseline: None,
        scope: None,
        finalized: false,
        snapshot_hash: None,
        notes,
    }
}

pub fn baseline_comparison(report: &EffortReport, baseline: Baseline) -> BaselineComparison {
    let rows = SUMMARY_ORDER
        .iter()
        .map(|&kind| {
            let pipeline = report.reported(kind);
            let base = baseline.get(kind);
            ComparisonRow { kind, baseline: base, pipeline, delta: pipeline as i64 - base as i64 }
        })
        .collect();
    BaselineComparison { baseline, rows }
}

/// In-scope data sources are the inventory's; out-of-scope ones are the
/// catalog entries not among them, compared by normalized name.
pub fn scope_document(session: &Session, catalog: &[String]) -> ScopeDocument {
    let in_scope: BTreeSet<String> = session
        .inventory
        .iter()
        .filter(|t| t.kind == TaskKind::DataSource)
        .map(|t| t.name.clone())
        .collect();
    let mut warnings = Vec::new();
    if catalog.is_empty() {
        warnings.push("No data source catalog was supplied; nothing can be listed as out of scope.".to_string());
    }
    let mut out_of_scope = BTreeSet::new();
    for entry in catalog {
        match normalize_task_name(entry) {
            Ok(name) if !in_scope.contains(&name) => {
                out_of_scope.insert(name);
            }
            Ok(_) => {}
            Err(_) => warnings.push(format!("Catalog entry {entry:?} has no usable name and was ignored.")),
        }
    }
    ScopeDocument {
        in_scope: in_scope.into_iter().collect(),
        out_of_scope: out_of_scope.into_iter().collect(),
        warnings,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    pub include_agent_ui: bool,
    pub baseline: Option<Baseline>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { include_agent_ui: true, baseline: None }
    }
}

/// Full report for a session snapshot.
pub fn build_report(session: &Session, options: ReportOptions) -> EffortReport {
    let mut report = effort_summary(&session.inventory, options.include_agent_ui);
    if let Some(baseline) = options.baseline {
        report.baseline = Some(baseline_comparison(&report, baseline));
    }
    report.scope = Some(scope_document(session, &session.config.catalog));
    if let Some(done) = &session.finalization {
        report.finalized = true;
        report.snapshot_hash = Some(done.snapshot_hash.clone());
    }
    if !session.iterations.is_empty() {
        report.notes.push(
            "Generated questions are recorded as produced; only tasks were reviewed, question editing is not supported."
                .to_string(),
        );
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?} (expected md, csv or json)")),
        }
    }
}

pub fn render(report: &EffortReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report).expect("report serializes");
            text.push('\n');
            text
        }
    }
}

fn md_cell(text: &str) -> String {
    text.replace('|', "\\|").replace('\n', " ")
}

fn signed(delta: i64) -> String {
    if delta > 0 {
        format!("+{delta}")
    } else {
        delta.to_string()
    }
}

fn render_markdown(report: &EffortReport) -> String {
    let mut out = String::new();
    out.push_str("# Effort report\n\n");
    match (&report.finalized, &report.snapshot_hash) {
        (true, Some(hash)) => {
            let _ = writeln!(out, "Status: final (inventory snapshot `{hash}`)\n");
        }
        _ => out.push_str("Status: draft\n\n"),
    }

    out.push_str("## Summary of effort metrics\n\n");
    let header: Vec<&str> = SUMMARY_ORDER.iter().map(|k| plural_label(*k)).collect();
    let _ = writeln!(out, "| {} |", header.join(" | "));
    out.push_str("|---:|---:|---:|\n");
    let values: Vec<String> = SUMMARY_ORDER.iter().map(|k| report.reported(*k).to_string()).collect();
    let _ = writeln!(out, "| {} |", values.join(" | "));
    if report.include_agent_ui {
        let _ = writeln!(
            out,
            "\nUser Interfaces = {} planner tasks + 1 agent interface.",
            report.count(TaskKind::UiWidget)
        );
    }

    if let Some(cmp) = &report.baseline {
        out.push_str("\n## Baseline comparison\n\n");
        out.push_str("| Kind | Baseline | Pipeline | Delta |\n|---|---:|---:|---:|\n");
        for row in &cmp.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                plural_label(row.kind),
                row.baseline,
                row.pipeline,
                signed(row.delta)
            );
        }
    }

    out.push_str("\n## Raw task list\n\n| Task | Name | Instruction |\n|---|---|---|\n");
    for t in &report.raw_list {
        let _ = writeln!(out, "| {} | {} | {} |", t.kind.label(), md_cell(&t.name), md_cell(&t.description));
    }
    if report.include_agent_ui {
        let _ = writeln!(
            out,
            "| {} | {} | {} (agent interface) |",
            TaskKind::UiWidget.label(),
            AGENT_UI_NAME,
            AGENT_UI_DESCRIPTION
        );
    }

    if let Some(scope) = &report.scope {
        out.push_str("\n## Scope\n\n### Data sources in scope\n\n");
        list_or_none(&mut out, &scope.in_scope);
        out.push_str("\n### Data sources out of scope\n\n");
        list_or_none(&mut out, &scope.out_of_scope);
        for w in &scope.warnings {
            let _ = writeln!(out, "\n> {w}");
        }
    }

    if !report.notes.is_empty() {
        out.push_str("\n## Notes\n\n");
        for n in &report.notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    out
}

fn list_or_none(out: &mut String, items: &[String]) {
    if items.is_empty() {
        out.push_str("_none_\n");
    }
    for item in items {
        let _ = writeln!(out, "- {item}");
    }
}

fn render_csv(report: &EffortReport) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["kind", "name", "description"]).expect("in-memory csv");
    for t in &report.raw_list {
        writer.write_record([t.kind.label(), &t.name, &t.description]).expect("in-memory csv");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}
