//! Project state: scope, document registry, answers, and versioned persistence.
//!
//! Every mutating method bumps `revision` and appends to the project's log.
//! Callers that share a project (the HTTP service) check the revision they
//! last saw with [`Project::expect_revision`] before mutating a copy.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::effect::EffectEstimate;
use crate::form::{self, AnswerSet, CompletenessReport, FormSchema, QualityAnswer, TableKind};
use crate::triage::{assign_members, Choice, LogEntry, LogEvent, StudyGroup, TriageState};

pub const SCHEMA_VERSION: u32 = 1;
pub const PROJECT_EXTENSION: &str = ".metaproj.json";

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("unknown document '{0}'")]
    UnknownDocument(String),
    #[error("unknown result '{0}'")]
    UnknownResult(String),
    #[error("unknown group '{0}'")]
    UnknownGroup(String),
    #[error("unknown annotation '{0}'")]
    UnknownAnnotation(String),
    #[error("document {document_id} is incomplete: {}", .report.problems().join("; "))]
    Incomplete { document_id: String, report: CompletenessReport },
    #[error("document {0} is complete; reset its status before changing answers that fail validation")]
    Locked(String),
    #[error("result '{0}' is not part of triage (its document is excluded or not complete)")]
    ResultNotEligible(String),
    #[error("result id '{0}' is already used")]
    DuplicateResultId(String),
    #[error("a group named '{0}' already exists")]
    DuplicateGroup(String),
    #[error("'{0}' is a default group and cannot be deleted")]
    DefaultGroup(String),
    #[error("group '{0}' still has members")]
    GroupNotEmpty(String),
    #[error("flagging result {0} requires a note")]
    FlagNeedsNote(String),
    #[error("'{}' is not an option in the {kind} table", choice.as_str())]
    ChoiceNotAllowed { kind: TableKind, choice: Choice },
    #[error("stale revision: expected {expected}, project is at {actual}")]
    StaleRevision { expected: u64, actual: u64 },
    #[error("project file has schema_version {found}; this build supports up to {supported}")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("malformed project file at byte {offset} (line {line}, column {column}): {message}")]
    Parse { offset: usize, line: usize, column: usize, message: String },
    #[error("broken reference: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ProjectError {
    fn validation(field: &str, message: impl Into<String>) -> Self {
        ProjectError::Validation { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchQuestion {
    pub intervention: String,
    pub outcome: String,
    #[serde(default)]
    pub topic: String,
}

impl ResearchQuestion {
    pub fn new(intervention: impl Into<String>, outcome: impl Into<String>) -> Self {
        Self { intervention: intervention.into(), outcome: outcome.into(), topic: String::new() }
    }

    pub fn rendered(&self) -> String {
        format!("What is the impact of {} on {}?", self.intervention, self.outcome)
    }

    fn check(&self) -> Result<(), ProjectError> {
        if self.intervention.trim().is_empty() {
            return Err(ProjectError::validation("intervention", "must not be empty"));
        }
        if self.outcome.trim().is_empty() {
            return Err(ProjectError::validation("outcome", "must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scope {
    #[serde(default)]
    pub criteria: Vec<String>,
    #[serde(default)]
    pub confounders: Vec<String>,
    #[serde(default)]
    pub target_context: String,
}

impl Scope {
    fn check(&self) -> Result<(), ProjectError> {
        for (field, list) in [("criteria", &self.criteria), ("confounders", &self.confounders)] {
            if list.iter().any(|s| s.trim().is_empty()) {
                return Err(ProjectError::validation(field, "entries must not be empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    pub authors: String,
    pub year: i32,
    pub title: String,
}

impl Citation {
    pub fn new(authors: impl Into<String>, year: i32, title: impl Into<String>) -> Self {
        Self { authors: authors.into(), year, title: title.into() }
    }

    pub fn first_author(&self) -> &str {
        self.authors.split([',', ';', '&']).next().unwrap_or("").split(" and ").next().unwrap_or("").trim()
    }

    /// "Chen et al. (2019)" style label.
    pub fn short(&self) -> String {
        let first = self.first_author();
        let more = self.authors.trim() != first;
        match (first.is_empty(), more) {
            (true, _) => format!("({})", self.year),
            (false, true) => format!("{first} et al. ({})", self.year),
            (false, false) => format!("{first} ({})", self.year),
        }
    }

    fn duplicate_key(&self) -> (String, i32, String) {
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        (norm(&self.title), self.year, norm(self.first_author()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    NotStarted,
    InProgress,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Highlight,
    Rectangle,
    Underline,
    Comment,
    Bookmark,
    Link,
}

/// Rectangle in page-fraction coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Region {
    fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.x) && unit(self.y) && self.width >= 0.0 && self.height >= 0.0
            && self.x + self.width <= 1.0 + 1e-12
            && self.y + self.height <= 1.0 + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub document_id: String,
    pub kind: AnnotationKind,
    pub page: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub citation: Citation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_ref: Option<String>,
    pub review_status: ReviewStatus,
    pub provisionally_included: bool,
    /// Set when the citation matches an earlier document; a warning only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

/// Partial update of a document's review state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentPatch {
    #[serde(default)]
    pub review_status: Option<ReviewStatus>,
    #[serde(default)]
    pub provisionally_included: Option<bool>,
}

/// One evidence-table row located in the project.
#[derive(Debug, Clone, Copy)]
pub struct ResultRef<'a> {
    pub document: &'a Document,
    pub index: usize,
    pub row: &'a form::EvidenceRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub schema_version: u32,
    pub question: ResearchQuestion,
    pub scope: Scope,
    pub documents: Vec<Document>,
    pub answers: BTreeMap<String, AnswerSet>,
    pub quality: BTreeMap<String, Vec<QualityAnswer>>,
    pub triage: TriageState,
    pub groups: Vec<StudyGroup>,
    pub revision: u64,
}

impl Project {
    pub fn create(question: ResearchQuestion) -> Result<Project, ProjectError> {
        question.check()?;
        Ok(Project {
            schema_version: SCHEMA_VERSION,
            question,
            scope: Scope::default(),
            documents: Vec::new(),
            answers: BTreeMap::new(),
            quality: BTreeMap::new(),
            triage: TriageState::default(),
            groups: StudyGroup::defaults(),
            revision: 0,
        })
    }

    /// Fails with [`ProjectError::StaleRevision`] unless the project is at `expected`.
    pub fn expect_revision(&self, expected: u64) -> Result<(), ProjectError> {
        if self.revision != expected {
            return Err(ProjectError::StaleRevision { expected, actual: self.revision });
        }
        Ok(())
    }

    pub(crate) fn commit(&mut self, event: LogEvent) {
        self.revision += 1;
        self.triage.log.push(LogEntry { revision: self.revision, event });
        let eligible = self.eligible_results();
        assign_members(&mut self.groups, &eligible, &self.triage);
        debug_assert!(self.check_integrity().is_ok(), "{:?}", self.check_integrity());
    }

    fn audit(&mut self, op: &str, target: Option<&str>) {
        self.commit(LogEvent::Audit { op: op.to_string(), target: target.map(String::from) });
    }

    fn forget_results(&mut self, results: Vec<String>) {
        self.triage.choices.retain(|a| !results.contains(&a.result_id));
        self.triage.overrides.retain(|id, _| !results.contains(id));
        self.commit(LogEvent::Forget { results });
    }

    pub fn update_scope(&mut self, scope: Scope) -> Result<(), ProjectError> {
        scope.check()?;
        self.scope = scope;
        self.audit("update_scope", None);
        Ok(())
    }

    /// Register a document. A citation matching an existing one (title, year,
    /// first author) is accepted and marked with `duplicate_of`.
    pub fn add_document(&mut self, citation: Citation, file_ref: Option<String>) -> Result<&Document, ProjectError> {
        if citation.title.trim().is_empty() {
            return Err(ProjectError::validation("title", "must not be empty"));
        }
        let key = citation.duplicate_key();
        let duplicate_of = self.documents.iter().find(|d| d.citation.duplicate_key() == key).map(|d| d.id.clone());
        let id = self.new_document_id(&citation, file_ref.as_deref());
        self.documents.push(Document {
            id: id.clone(),
            citation,
            file_ref,
            review_status: ReviewStatus::NotStarted,
            provisionally_included: true,
            duplicate_of,
            annotations: Vec::new(),
        });
        self.audit("add_document", Some(&id));
        Ok(self.documents.last().expect("just pushed"))
    }

    fn new_document_id(&self, citation: &Citation, file_ref: Option<&str>) -> String {
        (0u32..)
            .map(|salt| {
                let mut h = Sha256::new();
                for part in [
                    self.question.intervention.as_str(),
                    self.question.outcome.as_str(),
                    citation.authors.as_str(),
                    citation.title.as_str(),
                    file_ref.unwrap_or(""),
                ] {
                    h.update(part.as_bytes());
                    h.update([0]);
                }
                h.update(citation.year.to_le_bytes());
                h.update(self.revision.to_le_bytes());
                h.update((self.documents.len() as u64).to_le_bytes());
                h.update(salt.to_le_bytes());
                let digest = h.finalize();
                digest[..6].iter().map(|b| format!("{b:02x}")).collect::<String>()
            })
            .find(|id| self.document(id).is_none())
            .expect("unbounded salt")
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    fn document_mut(&mut self, id: &str) -> Result<&mut Document, ProjectError> {
        self.documents.iter_mut().find(|d| d.id == id).ok_or_else(|| ProjectError::UnknownDocument(id.into()))
    }

    pub fn validate_document(&self, id: &str) -> Result<CompletenessReport, ProjectError> {
        self.document(id).ok_or_else(|| ProjectError::UnknownDocument(id.into()))?;
        let empty = AnswerSet::default();
        let answers = self.answers.get(id).unwrap_or(&empty);
        let quality = self.quality.get(id).map(Vec::as_slice).unwrap_or_default();
        Ok(FormSchema::builtin().validate_answers(answers, quality))
    }

    pub fn set_review_status(&mut self, id: &str, status: ReviewStatus) -> Result<(), ProjectError> {
        if status == ReviewStatus::Complete {
            let report = self.validate_document(id)?;
            if !report.is_complete() {
                return Err(ProjectError::Incomplete { document_id: id.into(), report });
            }
        }
        self.document_mut(id)?.review_status = status;
        self.audit("set_review_status", Some(id));
        Ok(())
    }

    /// Flip provisional inclusion. Triage choices and manual placements of the
    /// document's results are kept and apply again when it is re-included.
    pub fn toggle_inclusion(&mut self, id: &str) -> Result<bool, ProjectError> {
        let doc = self.document_mut(id)?;
        doc.provisionally_included = !doc.provisionally_included;
        let now = doc.provisionally_included;
        self.audit(if now { "include_document" } else { "exclude_document" }, Some(id));
        Ok(now)
    }

    pub fn patch_document(&mut self, id: &str, patch: DocumentPatch) -> Result<(), ProjectError> {
        let doc = self.document(id).ok_or_else(|| ProjectError::UnknownDocument(id.into()))?;
        let flip = patch.provisionally_included.is_some_and(|want| want != doc.provisionally_included);
        if let Some(status) = patch.review_status {
            self.set_review_status(id, status)?;
        }
        if flip {
            self.toggle_inclusion(id)?;
        }
        Ok(())
    }

    /// Replace a document's extraction answers. Rows without an id get one.
    pub fn set_answers(&mut self, id: &str, mut answers: AnswerSet) -> Result<(), ProjectError> {
        let doc = self.document(id).ok_or_else(|| ProjectError::UnknownDocument(id.into()))?;
        let status = doc.review_status;

        let taken: BTreeSet<String> = self
            .answers
            .iter()
            .filter(|(doc_id, _)| doc_id.as_str() != id)
            .flat_map(|(_, a)| a.results.iter().map(|r| r.id.clone()))
            .collect();
        let mut mine = BTreeSet::new();
        for row in answers.results.iter().filter(|r| !r.id.is_empty()) {
            if row.id.contains(',') || row.id.chars().any(char::is_whitespace) {
                return Err(ProjectError::validation("result id", format!("'{}' may not contain commas or spaces", row.id)));
            }
            if taken.contains(&row.id) || !mine.insert(row.id.clone()) {
                return Err(ProjectError::DuplicateResultId(row.id.clone()));
            }
        }
        let mut next = 1;
        for row in answers.results.iter_mut().filter(|r| r.id.is_empty()) {
            while taken.contains(&format!("{id}-r{next}")) || mine.contains(&format!("{id}-r{next}")) {
                next += 1;
            }
            row.id = format!("{id}-r{next}");
            mine.insert(row.id.clone());
        }

        if status == ReviewStatus::Complete {
            let quality = self.quality.get(id).map(Vec::as_slice).unwrap_or_default();
            if !FormSchema::builtin().validate_answers(&answers, quality).is_complete() {
                return Err(ProjectError::Locked(id.into()));
            }
        }
        self.answers.insert(id.to_string(), answers);
        if status == ReviewStatus::NotStarted {
            self.document_mut(id)?.review_status = ReviewStatus::InProgress;
        }
        let existing: BTreeSet<String> = self.all_results().map(|r| r.row.id.clone()).collect();
        let gone: Vec<String> = self
            .triage
            .choices
            .iter()
            .map(|a| &a.result_id)
            .chain(self.triage.overrides.keys())
            .filter(|rid| !existing.contains(*rid))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !gone.is_empty() {
            self.forget_results(gone);
        }
        self.audit("set_answers", Some(id));
        Ok(())
    }

    pub fn set_quality(&mut self, id: &str, quality: Vec<QualityAnswer>) -> Result<(), ProjectError> {
        let doc = self.document(id).ok_or_else(|| ProjectError::UnknownDocument(id.into()))?;
        let schema = FormSchema::builtin();
        if let Some(bad) = quality.iter().find(|q| schema.quality_question(&q.question_id).is_none()) {
            return Err(ProjectError::validation("question_id", format!("unknown quality question '{}'", bad.question_id)));
        }
        if doc.review_status == ReviewStatus::Complete {
            let empty = AnswerSet::default();
            let answers = self.answers.get(id).unwrap_or(&empty);
            if !schema.validate_answers(answers, &quality).is_complete() {
                return Err(ProjectError::Locked(id.into()));
            }
        }
        let status = doc.review_status;
        self.quality.insert(id.to_string(), quality);
        if status == ReviewStatus::NotStarted {
            self.document_mut(id)?.review_status = ReviewStatus::InProgress;
        }
        self.audit("set_quality", Some(id));
        Ok(())
    }

    pub fn add_annotation(&mut self, document_id: &str, mut annotation: Annotation) -> Result<&Annotation, ProjectError> {
        let doc = self.document(document_id).ok_or_else(|| ProjectError::UnknownDocument(document_id.into()))?;
        if annotation.page < 1 {
            return Err(ProjectError::validation("page", "pages start at 1"));
        }
        let needs_region =
            matches!(annotation.kind, AnnotationKind::Highlight | AnnotationKind::Rectangle | AnnotationKind::Underline);
        match annotation.region {
            None if needs_region => return Err(ProjectError::validation("region", "required for this annotation kind")),
            Some(r) if !r.is_valid() => {
                return Err(ProjectError::validation("region", "must lie within the page ([0, 1] fractions)"))
            }
            _ => {}
        }
        match (&annotation.link_target, annotation.kind) {
            (None, AnnotationKind::Link) => {
                return Err(ProjectError::validation("link_target", "link annotations need a target"))
            }
            (Some(target), _) if !doc.annotations.iter().any(|a| &a.id == target) => {
                return Err(ProjectError::UnknownAnnotation(target.clone()))
            }
            _ => {}
        }
        let n = (1..).find(|n| !doc.annotations.iter().any(|a| a.id == format!("{document_id}-a{n}"))).unwrap();
        annotation.id = format!("{document_id}-a{n}");
        annotation.document_id = document_id.to_string();
        self.document_mut(document_id)?.annotations.push(annotation);
        self.audit("add_annotation", Some(document_id));
        let doc = self.document(document_id).expect("exists");
        Ok(doc.annotations.last().expect("just pushed"))
    }

    /// Every evidence row, in document order then row order.
    pub fn all_results(&self) -> impl Iterator<Item = ResultRef<'_>> {
        self.documents.iter().flat_map(move |doc| {
            self.answers
                .get(&doc.id)
                .into_iter()
                .flat_map(|a| a.results.iter().enumerate())
                .map(move |(index, row)| ResultRef { document: doc, index, row })
        })
    }

    pub fn result(&self, id: &str) -> Option<ResultRef<'_>> {
        self.all_results().find(|r| r.row.id == id)
    }

    pub fn result_exists(&self, id: &str) -> bool {
        self.result(id).is_some()
    }

    /// Result ids that take part in triage and grouping: rows of documents
    /// that are provisionally included and review-complete.
    pub fn eligible_results(&self) -> Vec<String> {
        self.all_results()
            .filter(|r| r.document.provisionally_included && r.document.review_status == ReviewStatus::Complete)
            .map(|r| r.row.id.clone())
            .collect()
    }

    /// Effect estimate for a result, from its document's answers.
    pub fn estimate(&self, result_id: &str) -> Option<Result<(crate::effect::StudyData, EffectEstimate), form::FormError>> {
        let r = self.result(result_id)?;
        let answers = self.answers.get(&r.document.id)?;
        Some(form::derive_evidence_table(answers).and_then(|table| form::row_estimate(&table, answers, r.row, r.index)))
    }

    pub fn check_integrity(&self) -> Result<(), ProjectError> {
        let broken = |msg: String| Err(ProjectError::Integrity(msg));
        let mut ids = BTreeSet::new();
        for doc in &self.documents {
            if !ids.insert(doc.id.as_str()) {
                return broken(format!("duplicate document id {}", doc.id));
            }
            let local: BTreeSet<&str> = doc.annotations.iter().map(|a| a.id.as_str()).collect();
            for a in &doc.annotations {
                if a.document_id != doc.id {
                    return broken(format!("annotation {} belongs to {}", a.id, a.document_id));
                }
                if let Some(t) = &a.link_target {
                    if !local.contains(t.as_str()) {
                        return broken(format!("annotation {} links to missing {t}", a.id));
                    }
                }
            }
        }
        for id in self.answers.keys().chain(self.quality.keys()) {
            if !ids.contains(id.as_str()) {
                return broken(format!("answers for unknown document {id}"));
            }
        }
        let results: BTreeSet<String> = self.all_results().map(|r| r.row.id.clone()).collect();
        if results.len() != self.all_results().count() {
            return broken("duplicate result ids".into());
        }
        let mut names = BTreeSet::new();
        for g in &self.groups {
            if !names.insert(g.name.as_str()) {
                return broken(format!("duplicate group {}", g.name));
            }
            if let Some(m) = g.members.iter().find(|m| !results.contains(*m)) {
                return broken(format!("group {} references unknown result {m}", g.name));
            }
        }
        for a in &self.triage.choices {
            if !results.contains(&a.result_id) {
                return broken(format!("triage choice for unknown result {}", a.result_id));
            }
        }
        for (rid, g) in &self.triage.overrides {
            if !results.contains(rid) || !names.contains(g.as_str()) {
                return broken(format!("manual placement {rid} → {g} does not resolve"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("project serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Project, ProjectError> {
        let value: Value = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        if let Some(found) = value.get("schema_version").and_then(Value::as_u64) {
            if found > SCHEMA_VERSION as u64 {
                return Err(ProjectError::UnsupportedVersion { found, supported: SCHEMA_VERSION });
            }
        }
        // re-parse from text so errors carry positions
        let project: Project = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        project.check_integrity()?;
        Ok(project)
    }
}

fn parse_error(text: &str, e: &serde_json::Error) -> ProjectError {
    let (line, column) = (e.line(), e.column());
    let offset = if line == 0 {
        0
    } else {
        text.split_inclusive('\n').take(line - 1).map(str::len).sum::<usize>() + column.saturating_sub(1)
    };
    ProjectError::Parse { offset: offset.min(text.len()), line, column, message: e.to_string() }
}

pub fn save_project(project: &Project, path: &Path) -> Result<(), ProjectError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(project.to_json().as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_project(path: &Path) -> Result<Project, ProjectError> {
    Project::from_json(&fs::read_to_string(path)?)
}
