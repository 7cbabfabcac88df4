//! Triage tables, per-result actions, study groups and flags.
//!
//! Group membership is never edited directly: it is re-derived after every
//! mutation from the set of triage-eligible results, the recorded actions,
//! and any manual placements made through [`GroupEdit::Move`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::form::{FormSchema, TableKind};
use crate::model::{Project, ProjectError};

pub const MAIN_GROUP: &str = "main analysis";
pub const SEPARATE_GROUP: &str = "separate analysis";
pub const LESS_APPLICABLE_GROUP: &str = "less applicable studies";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Include,
    Exclude,
    Flag,
    Separate,
    ShowSeparately,
}

impl Choice {
    pub fn as_str(self) -> &'static str {
        match self {
            Choice::Include => "include",
            Choice::Exclude => "exclude",
            Choice::Flag => "flag",
            Choice::Separate => "separate",
            Choice::ShowSeparately => "show_separately",
        }
    }

    /// Choices offered by each table.
    pub fn options(kind: TableKind) -> [Choice; 3] {
        match kind {
            TableKind::RiskOfBias => [Choice::Include, Choice::Exclude, Choice::Flag],
            TableKind::ConstructConsistency => [Choice::Include, Choice::Exclude, Choice::Separate],
            TableKind::Applicability => [Choice::Include, Choice::Exclude, Choice::ShowSeparately],
        }
    }
}

impl std::str::FromStr for Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Choice::Include, Choice::Exclude, Choice::Flag, Choice::Separate, Choice::ShowSeparately]
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown triage choice '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageAction {
    pub result_id: String,
    pub kind: TableKind,
    pub choice: Choice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TriageAction {
    pub fn new(result_id: impl Into<String>, kind: TableKind, choice: Choice) -> Self {
        Self { result_id: result_id.into(), kind, choice, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// The three groups every project starts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultGroup {
    Main,
    Separate,
    LessApplicable,
}

impl DefaultGroup {
    pub const ALL: [DefaultGroup; 3] = [DefaultGroup::Main, DefaultGroup::Separate, DefaultGroup::LessApplicable];

    pub fn initial_name(self) -> &'static str {
        match self {
            DefaultGroup::Main => MAIN_GROUP,
            DefaultGroup::Separate => SEPARATE_GROUP,
            DefaultGroup::LessApplicable => LESS_APPLICABLE_GROUP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyGroup {
    pub name: String,
    pub members: Vec<String>,
    pub meta_analyzed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<DefaultGroup>,
}

impl StudyGroup {
    pub fn defaults() -> Vec<StudyGroup> {
        DefaultGroup::ALL
            .into_iter()
            .map(|role| StudyGroup {
                name: role.initial_name().to_string(),
                members: Vec::new(),
                meta_analyzed: role != DefaultGroup::LessApplicable,
                role: Some(role),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GroupEdit {
    Create { name: String },
    Rename { from: String, to: String },
    Delete { name: String },
    Move { result_id: String, to: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub result_id: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Action(TriageAction),
    Edit(GroupEdit),
    /// Choices and placements dropped because their results were deleted.
    Forget { results: Vec<String> },
    /// Any other mutation, recorded for the audit trail only.
    Audit {
        op: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub revision: u64,
    #[serde(flatten)]
    pub event: LogEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriageState {
    /// Current choice per (result, table), sorted by result then table.
    #[serde(default)]
    pub choices: Vec<TriageAction>,
    /// Manual placements from the grouping dialog, result id → group name.
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
    /// Ordered record of every mutation.
    #[serde(default)]
    pub log: Vec<LogEntry>,
}

/// Where the recorded actions put a result before manual edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Excluded,
    Group(DefaultGroup),
}

/// Placement under the precedence exclude > show_separately > separate > include.
/// Flags never move a result.
pub fn default_placement(choices: impl IntoIterator<Item = Choice>) -> Placement {
    let mut separate = false;
    let mut show_separately = false;
    for c in choices {
        match c {
            Choice::Exclude => return Placement::Excluded,
            Choice::ShowSeparately => show_separately = true,
            Choice::Separate => separate = true,
            Choice::Include | Choice::Flag => {}
        }
    }
    if show_separately {
        Placement::Group(DefaultGroup::LessApplicable)
    } else if separate {
        Placement::Group(DefaultGroup::Separate)
    } else {
        Placement::Group(DefaultGroup::Main)
    }
}

impl TriageState {
    pub fn choice(&self, result_id: &str, kind: TableKind) -> Option<&TriageAction> {
        self.choices.iter().find(|a| a.result_id == result_id && a.kind == kind)
    }

    pub fn choices_for<'a>(&'a self, result_id: &'a str) -> impl Iterator<Item = &'a TriageAction> + 'a {
        self.choices.iter().filter(move |a| a.result_id == result_id)
    }

    pub fn flags(&self) -> Vec<Flag> {
        self.choices
            .iter()
            .filter(|a| a.choice == Choice::Flag)
            .map(|a| Flag { result_id: a.result_id.clone(), note: a.note.clone().unwrap_or_default() })
            .collect()
    }

    pub fn flag_note(&self, result_id: &str) -> Option<&str> {
        self.choice(result_id, TableKind::RiskOfBias)
            .filter(|a| a.choice == Choice::Flag)
            .and_then(|a| a.note.as_deref())
    }

    pub fn placement(&self, result_id: &str) -> Placement {
        default_placement(self.choices_for(result_id).map(|a| a.choice))
    }

    fn record(&mut self, action: TriageAction) {
        let released = action.choice != Choice::Flag;
        match self.choices.iter_mut().find(|a| a.result_id == action.result_id && a.kind == action.kind) {
            Some(existing) => *existing = action.clone(),
            None => {
                self.choices.push(action.clone());
                self.choices.sort_by(|a, b| (&a.result_id, a.kind).cmp(&(&b.result_id, b.kind)));
            }
        }
        if released {
            self.overrides.remove(&action.result_id);
        }
    }

    /// Forget choices and placements for results that no longer exist.
    pub(crate) fn retain_results(&mut self, exists: impl Fn(&str) -> bool) {
        self.choices.retain(|a| exists(&a.result_id));
        self.overrides.retain(|id, _| exists(id));
    }
}

/// Recompute every group's members for the given eligible results (in order).
pub fn assign_members(groups: &mut [StudyGroup], eligible: &[String], state: &TriageState) {
    for g in groups.iter_mut() {
        g.members.clear();
    }
    for id in eligible {
        let role = match state.placement(id) {
            Placement::Excluded => continue,
            Placement::Group(role) => role,
        };
        let manual = state.overrides.get(id).and_then(|name| groups.iter().position(|g| &g.name == name));
        let target = manual.or_else(|| groups.iter().position(|g| g.role == Some(role)));
        if let Some(i) = target {
            groups[i].members.push(id.clone());
        }
    }
}

fn check_action(action: &TriageAction) -> Result<(), ProjectError> {
    if !Choice::options(action.kind).contains(&action.choice) {
        return Err(ProjectError::ChoiceNotAllowed { kind: action.kind, choice: action.choice });
    }
    if action.choice == Choice::Flag && action.note.as_deref().is_none_or(|n| n.trim().is_empty()) {
        return Err(ProjectError::FlagNeedsNote(action.result_id.clone()));
    }
    Ok(())
}

fn check_group_name(name: &str, groups: &[StudyGroup]) -> Result<(), ProjectError> {
    if name.trim().is_empty() {
        return Err(ProjectError::Validation { field: "name".into(), message: "group name is empty".into() });
    }
    if groups.iter().any(|g| g.name == name) {
        return Err(ProjectError::DuplicateGroup(name.to_string()));
    }
    Ok(())
}

/// Apply one logged event to bare triage state. Shared by live mutation and
/// replay; `live` adds the checks that depend on which results are eligible
/// right now, which replay must not repeat.
fn step(
    state: &mut TriageState,
    groups: &mut Vec<StudyGroup>,
    eligible: &[String],
    event: &LogEvent,
    live: bool,
) -> Result<(), ProjectError> {
    match event {
        LogEvent::Action(action) => {
            check_action(action)?;
            if live && !eligible.contains(&action.result_id) {
                return Err(ProjectError::ResultNotEligible(action.result_id.clone()));
            }
            state.record(action.clone());
        }
        LogEvent::Edit(GroupEdit::Create { name }) => {
            check_group_name(name, groups)?;
            groups.push(StudyGroup { name: name.clone(), members: Vec::new(), meta_analyzed: true, role: None });
        }
        LogEvent::Edit(GroupEdit::Rename { from, to }) => {
            let i = groups.iter().position(|g| &g.name == from).ok_or_else(|| ProjectError::UnknownGroup(from.clone()))?;
            if from != to {
                check_group_name(to, groups)?;
            }
            groups[i].name = to.clone();
            for target in state.overrides.values_mut() {
                if target == from {
                    *target = to.clone();
                }
            }
        }
        LogEvent::Edit(GroupEdit::Delete { name }) => {
            let i = groups.iter().position(|g| &g.name == name).ok_or_else(|| ProjectError::UnknownGroup(name.clone()))?;
            if groups[i].role.is_some() {
                return Err(ProjectError::DefaultGroup(name.clone()));
            }
            if live && !groups[i].members.is_empty() {
                return Err(ProjectError::GroupNotEmpty(name.clone()));
            }
            groups.remove(i);
            // placements of currently hidden results pointing here fall back to defaults
            state.overrides.retain(|_, target| target != name);
        }
        LogEvent::Edit(GroupEdit::Move { result_id, to }) => {
            if !groups.iter().any(|g| &g.name == to) {
                return Err(ProjectError::UnknownGroup(to.clone()));
            }
            if live && !groups.iter().any(|g| g.members.contains(result_id)) {
                return Err(ProjectError::ResultNotEligible(result_id.clone()));
            }
            state.overrides.insert(result_id.clone(), to.clone());
        }
        LogEvent::Forget { results } => state.retain_results(|id| !results.iter().any(|r| r == id)),
        LogEvent::Audit { .. } => {}
    }
    assign_members(groups, eligible, state);
    Ok(())
}

impl Project {
    /// Record a triage choice and re-derive group placement.
    ///
    /// Any choice other than `flag` releases a manual placement of the result.
    pub fn apply_action(&mut self, action: TriageAction) -> Result<(), ProjectError> {
        if !self.result_exists(&action.result_id) {
            return Err(ProjectError::UnknownResult(action.result_id.clone()));
        }
        let eligible = self.eligible_results();
        let event = LogEvent::Action(action);
        step(&mut self.triage, &mut self.groups, &eligible, &event, true)?;
        self.commit(event);
        Ok(())
    }

    pub fn edit_groups(&mut self, edit: GroupEdit) -> Result<(), ProjectError> {
        if let GroupEdit::Move { result_id, .. } = &edit {
            if !self.result_exists(result_id) {
                return Err(ProjectError::UnknownResult(result_id.clone()));
            }
        }
        let eligible = self.eligible_results();
        let event = LogEvent::Edit(edit);
        step(&mut self.triage, &mut self.groups, &eligible, &event, true)?;
        self.commit(event);
        Ok(())
    }

    pub fn flags(&self) -> Vec<Flag> {
        self.triage.flags()
    }

    /// Triage state and groups rebuilt from scratch by replaying the log
    /// against the current set of eligible results.
    pub fn replay_groups(&self) -> (TriageState, Vec<StudyGroup>) {
        let eligible = self.eligible_results();
        let mut state = TriageState::default();
        let mut groups = StudyGroup::defaults();
        assign_members(&mut groups, &eligible, &state);
        for entry in &self.triage.log {
            let _ = step(&mut state, &mut groups, &eligible, &entry.event, false);
        }
        (state, groups)
    }

    pub fn build_triage_table(&self, kind: TableKind) -> TriageTable {
        build_triage_table(self, FormSchema::builtin(), kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSource {
    Extraction,
    Quality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub id: String,
    pub prompt: String,
    pub source: ColumnSource,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageRow {
    pub result_id: String,
    pub document_id: String,
    pub study: String,
    pub label: String,
    pub cells: Vec<Cell>,
    pub action: Option<TriageAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageTable {
    pub kind: TableKind,
    pub columns: Vec<Column>,
    pub rows: Vec<TriageRow>,
    /// (row, column) pairs.
    pub highlighted_cells: BTreeSet<(usize, usize)>,
}

fn render_value(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::Bool(b) => Some(if *b { "yes" } else { "no" }.to_string()),
        Value::String(s) if s.trim().is_empty() => None,
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(render_value).collect();
            (!parts.is_empty()).then(|| parts.join(", "))
        }
        other => Some(other.to_string()),
    }
}

pub fn build_triage_table(project: &Project, schema: &FormSchema, kind: TableKind) -> TriageTable {
    let mut columns = Vec::new();
    for qq in schema.quality.iter().filter(|q| q.table_kind == kind) {
        if let Some(q) = schema.question(&qq.extraction_link) {
            columns.push(Column { id: q.id.clone(), prompt: q.prompt.clone(), source: ColumnSource::Extraction });
        }
        columns.push(Column { id: qq.id.clone(), prompt: qq.prompt.clone(), source: ColumnSource::Quality });
    }

    let eligible: BTreeSet<String> = project.eligible_results().into_iter().collect();
    let mut rows = Vec::new();
    for doc in &project.documents {
        let Some(answers) = project.answers.get(&doc.id) else { continue };
        let visible: BTreeSet<&str> = schema.visible_questions(answers).iter().map(|q| q.id.as_str()).collect();
        let quality = project.quality.get(&doc.id).map(Vec::as_slice).unwrap_or_default();
        for row in answers.results.iter().filter(|r| eligible.contains(&r.id)) {
            let cells = columns
                .iter()
                .map(|col| match col.source {
                    ColumnSource::Extraction if visible.contains(col.id.as_str()) => {
                        Cell { value: answers.get(&col.id).and_then(render_value), note: None }
                    }
                    ColumnSource::Extraction => Cell::default(),
                    ColumnSource::Quality => quality
                        .iter()
                        .find(|qa| qa.question_id == col.id)
                        .map(|qa| Cell {
                            value: Some(qa.verdict.as_str().to_string()),
                            note: (!qa.note.trim().is_empty()).then(|| qa.note.clone()),
                        })
                        .unwrap_or_default(),
                })
                .collect();
            rows.push(TriageRow {
                result_id: row.id.clone(),
                document_id: doc.id.clone(),
                study: doc.citation.short(),
                label: row.label.clone(),
                cells,
                action: project.triage.choice(&row.id, kind).cloned(),
            });
        }
    }
    let mut table = TriageTable { kind, columns, rows, highlighted_cells: BTreeSet::new() };
    table.highlighted_cells = highlight_differences(&table);
    table
}

/// Cells that disagree with their column's majority.
///
/// Empty cells are ignored. With a unique modal value, every cell that differs
/// from it is highlighted; when several values tie for the mode, every
/// non-empty cell in the column is.
pub fn highlight_differences(table: &TriageTable) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for col in 0..table.columns.len() {
        let values: Vec<(usize, &str)> = table
            .rows
            .iter()
            .enumerate()
            .filter_map(|(r, row)| row.cells.get(col).and_then(|c| c.value.as_deref()).map(|v| (r, v)))
            .collect();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, v) in &values {
            *counts.entry(v).or_default() += 1;
        }
        if counts.len() <= 1 {
            continue;
        }
        let top = counts.values().copied().max().unwrap_or(0);
        let modes: Vec<&str> = counts.iter().filter(|(_, &c)| c == top).map(|(v, _)| *v).collect();
        for (r, v) in values {
            if modes.len() > 1 || v != modes[0] {
                out.insert((r, col));
            }
        }
    }
    out
}

/// CSV with one header row of question prompts.
pub fn export_csv(table: &TriageTable) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Result", "Study"];
    header.extend(table.columns.iter().map(|c| c.prompt.as_str()));
    header.push("What will you do about it?");
    w.write_record(&header)?;
    for row in &table.rows {
        let mut record = vec![row.result_id.clone(), row.study.clone()];
        record.extend(row.cells.iter().map(|c| c.value.clone().unwrap_or_default()));
        record.push(row.action.as_ref().map(|a| a.choice.as_str().to_string()).unwrap_or_default());
        w.write_record(&record)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
