//! Evidence-extraction and quality-assessment questionnaires.
//!
//! Forms are data: the bundled bank lives in `schema/extraction_schema.json`
//! and `schema/quality_schema.json`. Questions appear or hide according to
//! `show_if` conjunctions over earlier answers; hidden answers are kept
//! (dormant) so toggling a branch back restores them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::effect::{ContinuousArm, DichotomousArm, EffectError, EffectEstimate, EffectKind, StudyData};

const EXTRACTION_SCHEMA: &str = include_str!("../schema/extraction_schema.json");
const QUALITY_SCHEMA: &str = include_str!("../schema/quality_schema.json");

// Question ids the engine reads directly.
pub const DESIGN: &str = "study_design";
pub const OUTCOME_KIND: &str = "outcome_kind";
pub const TIMEPOINTS: &str = "timepoints";
pub const OUTCOME_UNITS: &str = "outcome_units";
pub const EFFECT_METRIC: &str = "effect_metric";
pub const DICHOTOMOUS_METRIC: &str = "dichotomous_metric";
pub const AUTHORS: &str = "authors";
pub const YEAR: &str = "year";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Identity,
    Context,
    Participants,
    Measurement,
    EffectSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnswerKind {
    Text,
    Integer,
    Number,
    SingleChoice { options: Vec<String> },
    MultiChoice { options: Vec<String> },
    Boolean,
}

impl AnswerKind {
    /// `Ok(false)` for "no answer", `Ok(true)` for a well-formed answer.
    fn check(&self, value: &Value) -> Result<bool, String> {
        if value.is_null() {
            return Ok(false);
        }
        match (self, value) {
            (AnswerKind::Text, Value::String(s)) => Ok(!s.trim().is_empty()),
            (AnswerKind::Integer, Value::Number(n)) if n.is_i64() || n.is_u64() => Ok(true),
            (AnswerKind::Number, Value::Number(_)) => Ok(true),
            (AnswerKind::Boolean, Value::Bool(_)) => Ok(true),
            (AnswerKind::SingleChoice { options }, Value::String(s)) => {
                if options.contains(s) {
                    Ok(true)
                } else {
                    Err(format!("'{s}' is not one of {options:?}"))
                }
            }
            (AnswerKind::MultiChoice { options }, Value::Array(items)) => {
                for item in items {
                    match item.as_str() {
                        Some(s) if options.iter().any(|o| o == s) => {}
                        _ => return Err(format!("{item} is not one of {options:?}")),
                    }
                }
                Ok(!items.is_empty())
            }
            (kind, v) => Err(format!("expected {}, got {v}", kind.name())),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            AnswerKind::Text => "text",
            AnswerKind::Integer => "an integer",
            AnswerKind::Number => "a number",
            AnswerKind::SingleChoice { .. } => "one option",
            AnswerKind::MultiChoice { .. } => "a list of options",
            AnswerKind::Boolean => "true or false",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub question: String,
    pub equals: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manual {
    pub description: String,
    pub location: String,
    pub importance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub section: Section,
    pub prompt: String,
    pub answer_kind: AnswerKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub show_if: Vec<Condition>,
    #[serde(default)]
    pub mandatory: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_link: Option<String>,
    pub manual: Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    RiskOfBias,
    ConstructConsistency,
    Applicability,
}

impl TableKind {
    pub const ALL: [TableKind; 3] = [TableKind::RiskOfBias, TableKind::ConstructConsistency, TableKind::Applicability];

    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::RiskOfBias => "risk_of_bias",
            TableKind::ConstructConsistency => "construct_consistency",
            TableKind::Applicability => "applicability",
        }
    }
}

impl std::str::FromStr for TableKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TableKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown triage table kind '{s}'"))
    }
}

impl std::fmt::Display for TableKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityQuestion {
    pub id: String,
    pub table_kind: TableKind,
    pub prompt: String,
    pub extraction_link: String,
}

/// `yes` means "there is an issue".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    NotSure,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
            Verdict::NotSure => "not_sure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityAnswer {
    pub question_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
}

impl QualityAnswer {
    pub fn new(question_id: impl Into<String>, verdict: Verdict, note: impl Into<String>) -> Self {
        Self { question_id: question_id.into(), verdict, note: note.into() }
    }

    /// Issues and uncertainty must carry their rationale.
    pub fn note_ok(&self) -> bool {
        self.verdict == Verdict::No || !self.note.trim().is_empty()
    }
}

/// One row of the evidence table: a single extracted comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    /// Project-unique result id; assigned on save when left empty.
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timepoint: Option<String>,
    /// Column name to value; `null` marks a statistic the article did not report.
    #[serde(default)]
    pub stats: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerSet {
    #[serde(default)]
    pub values: BTreeMap<String, Value>,
    #[serde(default)]
    pub results: Vec<EvidenceRow>,
}

impl AnswerSet {
    pub fn get(&self, id: &str) -> Option<&Value> {
        self.values.get(id).filter(|v| !v.is_null())
    }

    pub fn set(&mut self, id: impl Into<String>, value: impl Into<Value>) -> &mut Self {
        self.values.insert(id.into(), value.into());
        self
    }

    fn str(&self, id: &str) -> Option<&str> {
        self.get(id).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    BetweenSubjects,
    WithinSubjects,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    Dichotomous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTableSchema {
    pub design: Design,
    pub outcome_kind: OutcomeKind,
    pub columns: Vec<String>,
    pub timepoints: Vec<String>,
}

/// Columns that may be `null` (reported as missing by the article).
pub const OPTIONAL_COLUMNS: &[&str] = &["r_prepost"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormError {
    #[error("evidence table needs answers to: {}", .0.join(", "))]
    IncompletePrerequisites(Vec<String>),
    #[error("within-subjects designs with dichotomous outcomes are not supported")]
    UnsupportedDesign,
    #[error("result {row}: missing statistic '{column}'")]
    MissingStatistic { row: String, column: String },
    #[error("result {row}: '{column}' must be {expected}")]
    BadStatistic { row: String, column: String, expected: &'static str },
    #[error("result {row}: {source}")]
    Effect { row: String, source: EffectError },
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate question id '{0}'")]
    DuplicateId(String),
    #[error("question '{question}' show_if refers to '{target}', which is not an earlier question")]
    ForwardReference { question: String, target: String },
    #[error("question '{0}' has an empty coding-manual field")]
    EmptyManual(String),
    #[error("link between '{0}' and '{1}' is not mutual")]
    BrokenLink(String, String),
    #[error("required question '{0}' is missing from the schema")]
    MissingRequired(&'static str),
}

/// Unanswered, malformed and otherwise incomplete parts of an answer set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    /// Mandatory visible questions without an answer.
    pub missing: Vec<String>,
    /// Visible answers that do not fit their question, as `id: reason`.
    pub invalid: Vec<String>,
    /// Quality questions answered yes / not sure without a note.
    pub quality_notes: Vec<String>,
    /// Evidence-table problems.
    pub evidence: Vec<String>,
}

impl CompletenessReport {
    /// Question ids (or evidence-row names) with a problem, in report order.
    pub fn field_ids(&self) -> Vec<String> {
        let id = |s: &String| s.split(':').next().unwrap_or(s).trim().to_string();
        let mut out: Vec<String> = Vec::new();
        for f in self.missing.iter().chain(&self.invalid).chain(&self.quality_notes).chain(&self.evidence).map(id) {
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }

    /// Human-readable list of every problem.
    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = self.missing.iter().map(|m| format!("{m}: unanswered")).collect();
        out.extend(self.invalid.iter().cloned());
        out.extend(self.quality_notes.iter().map(|q| format!("{q}: note required")));
        out.extend(self.evidence.iter().cloned());
        out
    }

    pub fn is_complete(&self) -> bool {
        self.missing.is_empty() && self.invalid.is_empty() && self.quality_notes.is_empty() && self.evidence.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormSchema {
    pub questions: Vec<Question>,
    pub quality: Vec<QualityQuestion>,
}

impl FormSchema {
    /// The bundled question bank.
    pub fn builtin() -> &'static FormSchema {
        static BUILTIN: OnceLock<FormSchema> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            FormSchema::from_json(EXTRACTION_SCHEMA, QUALITY_SCHEMA).expect("bundled schema is valid")
        })
    }

    pub fn from_json(extraction: &str, quality: &str) -> Result<Self, SchemaError> {
        let schema = FormSchema { questions: serde_json::from_str(extraction)?, quality: serde_json::from_str(quality)? };
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<(), SchemaError> {
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            for cond in &q.show_if {
                if !seen.contains(cond.question.as_str()) {
                    return Err(SchemaError::ForwardReference { question: q.id.clone(), target: cond.question.clone() });
                }
            }
            if !seen.insert(q.id.as_str()) {
                return Err(SchemaError::DuplicateId(q.id.clone()));
            }
            let m = &q.manual;
            if [&m.description, &m.location, &m.importance].iter().any(|s| s.trim().is_empty()) {
                return Err(SchemaError::EmptyManual(q.id.clone()));
            }
        }
        for qq in &self.quality {
            if !seen.insert(qq.id.as_str()) {
                return Err(SchemaError::DuplicateId(qq.id.clone()));
            }
            let linked = self.question(&qq.extraction_link);
            if linked.and_then(|q| q.qa_link.as_deref()) != Some(qq.id.as_str()) {
                return Err(SchemaError::BrokenLink(qq.id.clone(), qq.extraction_link.clone()));
            }
        }
        for q in &self.questions {
            if let Some(link) = &q.qa_link {
                if self.quality_question(link).map(|qq| qq.extraction_link.as_str()) != Some(q.id.as_str()) {
                    return Err(SchemaError::BrokenLink(q.id.clone(), link.clone()));
                }
            }
        }
        for required in [DESIGN, OUTCOME_KIND] {
            if self.question(required).is_none() {
                return Err(SchemaError::MissingRequired(required));
            }
        }
        Ok(())
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn quality_question(&self, id: &str) -> Option<&QualityQuestion> {
        self.quality.iter().find(|q| q.id == id)
    }

    /// Questions currently shown, in form order.
    ///
    /// A condition only holds when the question it tests is itself visible,
    /// so dormant answers never open further branches.
    pub fn visible_questions(&self, answers: &AnswerSet) -> Vec<&Question> {
        let mut visible: HashMap<&str, bool> = HashMap::new();
        let mut out = Vec::new();
        for q in &self.questions {
            let shown = q.show_if.iter().all(|c| {
                visible.get(c.question.as_str()).copied().unwrap_or(false)
                    && answers.get(&c.question) == Some(&c.equals)
            });
            visible.insert(&q.id, shown);
            if shown {
                out.push(q);
            }
        }
        out
    }

    /// Counterpart of `id` across the extraction and quality forms.
    pub fn linked_question(&self, id: &str) -> Option<&str> {
        if let Some(q) = self.question(id) {
            return q.qa_link.as_deref();
        }
        self.quality_question(id).map(|qq| qq.extraction_link.as_str())
    }

    pub fn validate_answers(&self, answers: &AnswerSet, quality: &[QualityAnswer]) -> CompletenessReport {
        let mut report = CompletenessReport::default();
        for q in self.visible_questions(answers) {
            match answers.get(&q.id).map(|v| q.answer_kind.check(v)) {
                None | Some(Ok(false)) if q.mandatory => report.missing.push(q.id.clone()),
                Some(Err(reason)) => report.invalid.push(format!("{}: {reason}", q.id)),
                _ => {}
            }
        }
        let mut answered = BTreeSet::new();
        for qa in quality {
            if self.quality_question(&qa.question_id).is_none() {
                report.invalid.push(format!("{}: unknown quality question", qa.question_id));
            } else if !answered.insert(qa.question_id.as_str()) {
                report.invalid.push(format!("{}: answered more than once", qa.question_id));
            }
            if !qa.note_ok() {
                report.quality_notes.push(qa.question_id.clone());
            }
        }
        report.evidence = evidence_problems(answers);
        report
    }
}

fn evidence_problems(answers: &AnswerSet) -> Vec<String> {
    let table = match derive_evidence_table(answers) {
        Ok(t) => t,
        // prerequisites are mandatory questions and already reported as missing
        Err(FormError::IncompletePrerequisites(_)) => return Vec::new(),
        Err(e) => return vec![e.to_string()],
    };
    if answers.results.is_empty() {
        return vec!["evidence table has no results".into()];
    }
    let mut problems = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, row) in answers.results.iter().enumerate() {
        if !row.id.is_empty() && !ids.insert(row.id.as_str()) {
            problems.push(format!("duplicate result id '{}'", row.id));
        }
        let unknown: Vec<&String> = row.stats.keys().filter(|c| !table.columns.contains(c)).collect();
        if !unknown.is_empty() {
            problems.push(format!("result {}: unexpected columns {unknown:?}", row_name(row, i)));
        }
        if let Err(e) = row_estimate(&table, answers, row, i) {
            problems.push(e.to_string());
        }
    }
    problems
}

fn row_name(row: &EvidenceRow, index: usize) -> String {
    if row.id.is_empty() {
        format!("#{}", index + 1)
    } else {
        row.id.clone()
    }
}

/// The evidence-table layout implied by the design and outcome answers.
pub fn derive_evidence_table(answers: &AnswerSet) -> Result<EvidenceTableSchema, FormError> {
    let design = answers.str(DESIGN).and_then(|s| serde_json::from_value(Value::String(s.into())).ok());
    let outcome = answers.str(OUTCOME_KIND).and_then(|s| serde_json::from_value(Value::String(s.into())).ok());
    let (design, outcome_kind) = match (design, outcome) {
        (Some(d), Some(o)) => (d, o),
        (d, o) => {
            let mut missing = Vec::new();
            if d.is_none() {
                missing.push(DESIGN.to_string());
            }
            if o.is_none() {
                missing.push(OUTCOME_KIND.to_string());
            }
            return Err(FormError::IncompletePrerequisites(missing));
        }
    };
    let columns: &[&str] = match (design, outcome_kind) {
        (Design::BetweenSubjects, OutcomeKind::Continuous) => &[
            "treatment.mean",
            "treatment.sd",
            "treatment.n",
            "control.mean",
            "control.sd",
            "control.n",
        ],
        (Design::BetweenSubjects, OutcomeKind::Dichotomous) => {
            &["treatment.events", "treatment.n", "control.events", "control.n"]
        }
        (Design::WithinSubjects, OutcomeKind::Continuous) => &["mean_pre", "mean_post", "sd_pre", "n", "r_prepost"],
        (Design::WithinSubjects, OutcomeKind::Dichotomous) => return Err(FormError::UnsupportedDesign),
    };
    let timepoints = answers
        .str(TIMEPOINTS)
        .map(|s| s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    Ok(EvidenceTableSchema {
        design,
        outcome_kind,
        columns: columns.iter().map(|c| c.to_string()).collect(),
        timepoints,
    })
}

/// Effect kind chosen for this document's results.
pub fn effect_kind(answers: &AnswerSet, table: &EvidenceTableSchema) -> EffectKind {
    match (table.design, table.outcome_kind) {
        (Design::BetweenSubjects, OutcomeKind::Continuous) => match answers.str(EFFECT_METRIC) {
            Some("raw") => EffectKind::MeanDifference,
            _ => EffectKind::HedgesG,
        },
        (_, OutcomeKind::Dichotomous) => match answers.str(DICHOTOMOUS_METRIC) {
            Some("risk_difference") => EffectKind::RiskDifference,
            _ => EffectKind::LogOddsRatio,
        },
        (Design::WithinSubjects, OutcomeKind::Continuous) => EffectKind::HedgesG,
    }
}

/// Arm statistics for one evidence row.
pub fn row_data(table: &EvidenceTableSchema, row: &EvidenceRow, index: usize) -> Result<StudyData, FormError> {
    let name = row_name(row, index);
    let stat = |column: &str| -> Result<f64, FormError> {
        match row.stats.get(column) {
            Some(Some(v)) if v.is_finite() => Ok(*v),
            Some(Some(_)) => {
                Err(FormError::BadStatistic { row: name.clone(), column: column.into(), expected: "finite" })
            }
            _ => Err(FormError::MissingStatistic { row: name.clone(), column: column.into() }),
        }
    };
    let count = |column: &str| -> Result<u32, FormError> {
        let v = stat(column)?;
        if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as u32)
        } else {
            Err(FormError::BadStatistic { row: name.clone(), column: column.into(), expected: "a whole number" })
        }
    };
    let data = match (table.design, table.outcome_kind) {
        (Design::BetweenSubjects, OutcomeKind::Continuous) => StudyData::Continuous {
            treatment: ContinuousArm::new(stat("treatment.mean")?, stat("treatment.sd")?, count("treatment.n")?),
            control: ContinuousArm::new(stat("control.mean")?, stat("control.sd")?, count("control.n")?),
        },
        (Design::BetweenSubjects, OutcomeKind::Dichotomous) => StudyData::Dichotomous {
            treatment: DichotomousArm::new(count("treatment.events")?, count("treatment.n")?),
            control: DichotomousArm::new(count("control.events")?, count("control.n")?),
        },
        (Design::WithinSubjects, OutcomeKind::Continuous) => StudyData::PrePost {
            pre_mean: stat("mean_pre")?,
            post_mean: stat("mean_post")?,
            sd_pre: stat("sd_pre")?,
            n: count("n")?,
            r: match row.stats.get("r_prepost") {
                Some(Some(r)) => Some(*r),
                _ => None,
            },
        },
        (Design::WithinSubjects, OutcomeKind::Dichotomous) => return Err(FormError::UnsupportedDesign),
    };
    Ok(data)
}

/// Data and effect estimate for one evidence row. Zero-variance estimates are
/// returned as-is; callers decide whether they can be pooled.
pub fn row_estimate(
    table: &EvidenceTableSchema,
    answers: &AnswerSet,
    row: &EvidenceRow,
    index: usize,
) -> Result<(StudyData, EffectEstimate), FormError> {
    let data = row_data(table, row, index)?;
    let mut est = data
        .estimate(effect_kind(answers, table))
        .map_err(|source| FormError::Effect { row: row_name(row, index), source })?;
    est.original_units = answers.str(OUTCOME_UNITS).map(String::from);
    Ok((data, est))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use serde_json::json;

    fn schema() -> &'static FormSchema {
        FormSchema::builtin()
    }

    /// Answers every mandatory question reachable with the given branch choices.
    pub(crate) fn complete_answers(design: &str, outcome: &str) -> AnswerSet {
        let mut a = AnswerSet::default();
        a.set("authors", "Chen, Li")
            .set("year", 2019)
            .set("title", "Robots and mood")
            .set("study_design", design)
            .set("setting", "community")
            .set("adjusts_for_confounders", false)
            .set("intervention_description", "Companion robot, weekly sessions")
            .set("population_description", "Adults over 65 living independently")
            .set("clinical_condition", "no")
            .set("sample_size_total", 40)
            .set("outcome_name", "Depressive symptoms")
            .set("outcome_kind", outcome)
            .set("measurement_instrument", "GDS-15")
            .set("higher_is_better", false)
            .set("statistics_source", "table");
        if design == "between_subjects" {
            a.set("assignment_method", "randomized");
        }
        a
    }

    fn row(stats: &[(&str, Option<f64>)]) -> EvidenceRow {
        EvidenceRow {
            id: String::new(),
            label: "post-test".into(),
            timepoint: None,
            stats: stats.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn builtin_bank_shape() {
        let s = schema();
        assert_eq!(s.questions.len(), 40);
        assert_eq!(s.quality.len(), 12);
        for kind in TableKind::ALL {
            assert_eq!(s.quality.iter().filter(|q| q.table_kind == kind).count(), 4);
        }
    }

    #[test]
    fn covariate_question_follows_confounder_answer() {
        let s = schema();
        let mut a = AnswerSet::default();
        a.set("adjusts_for_confounders", true);
        assert!(s.visible_questions(&a).iter().any(|q| q.id == "adjusted_covariates"));
        a.set("adjusts_for_confounders", false);
        assert!(!s.visible_questions(&a).iter().any(|q| q.id == "adjusted_covariates"));
    }

    #[test]
    fn empty_answers_show_unconditioned_questions() {
        let s = schema();
        let shown: Vec<&str> = s.visible_questions(&AnswerSet::default()).iter().map(|q| q.id.as_str()).collect();
        let unconditioned: Vec<&str> =
            s.questions.iter().filter(|q| q.show_if.is_empty()).map(|q| q.id.as_str()).collect();
        assert_eq!(shown, unconditioned);
    }

    #[test]
    fn dormant_answers_do_not_open_branches() {
        let s = schema();
        let mut a = AnswerSet::default();
        a.set("study_design", "within_subjects").set("outcome_kind", "continuous");
        assert!(s.visible_questions(&a).iter().any(|q| q.id == "prepost_correlation_reported"));
        // effect_metric requires between_subjects; answering it while hidden changes nothing
        a.set("effect_metric", "raw");
        assert!(!s.visible_questions(&a).iter().any(|q| q.id == "effect_metric"));
    }

    #[test]
    fn evidence_table_decision_table() {
        let mut a = AnswerSet::default();
        a.set("study_design", "between_subjects").set("outcome_kind", "continuous");
        let t = derive_evidence_table(&a).unwrap();
        assert_eq!(
            t.columns,
            ["treatment.mean", "treatment.sd", "treatment.n", "control.mean", "control.sd", "control.n"]
        );
        a.set("outcome_kind", "dichotomous");
        assert_eq!(
            derive_evidence_table(&a).unwrap().columns,
            ["treatment.events", "treatment.n", "control.events", "control.n"]
        );
        a.set("study_design", "within_subjects").set("outcome_kind", "continuous");
        assert_eq!(derive_evidence_table(&a).unwrap().columns, ["mean_pre", "mean_post", "sd_pre", "n", "r_prepost"]);
        a.set("outcome_kind", "dichotomous");
        assert_eq!(derive_evidence_table(&a), Err(FormError::UnsupportedDesign));
    }

    #[test]
    fn evidence_table_needs_prerequisites() {
        let mut a = AnswerSet::default();
        a.set("study_design", "between_subjects");
        assert_eq!(
            derive_evidence_table(&a),
            Err(FormError::IncompletePrerequisites(vec!["outcome_kind".into()]))
        );
    }

    #[test]
    fn timepoints_are_split() {
        let mut a = AnswerSet::default();
        a.set("study_design", "between_subjects")
            .set("outcome_kind", "continuous")
            .set("timepoints", "baseline, 8 weeks,, 6 months");
        assert_eq!(derive_evidence_table(&a).unwrap().timepoints, ["baseline", "8 weeks", "6 months"]);
    }

    #[test]
    fn complete_answers_validate() {
        let mut a = complete_answers("between_subjects", "continuous");
        a.results.push(row(&[
            ("treatment.mean", Some(10.0)),
            ("treatment.sd", Some(2.0)),
            ("treatment.n", Some(20.0)),
            ("control.mean", Some(8.0)),
            ("control.sd", Some(2.0)),
            ("control.n", Some(20.0)),
        ]));
        let report = schema().validate_answers(&a, &[QualityAnswer::new("rob_confounding", Verdict::No, "")]);
        assert!(report.is_complete(), "{report:?}");
    }

    #[test]
    fn missing_mandatory_is_listed() {
        let mut a = complete_answers("between_subjects", "continuous");
        a.values.remove("outcome_name");
        let report = schema().validate_answers(&a, &[]);
        assert_eq!(report.missing, ["outcome_name"]);
    }

    #[test]
    fn quality_note_rule() {
        let a = complete_answers("within_subjects", "continuous");
        let report = schema().validate_answers(
            &a,
            &[
                QualityAnswer::new("rob_confounding", Verdict::Yes, " "),
                QualityAnswer::new("app_population", Verdict::NotSure, "unclear sample"),
                QualityAnswer::new("app_setting", Verdict::No, ""),
            ],
        );
        assert_eq!(report.quality_notes, ["rob_confounding"]);
    }

    #[test]
    fn wrong_answer_types_are_invalid() {
        let mut a = complete_answers("between_subjects", "continuous");
        a.set("year", "twenty").set("setting", "moon");
        let report = schema().validate_answers(&a, &[]);
        assert_eq!(report.invalid.len(), 2, "{report:?}");
    }

    #[test]
    fn evidence_rows_are_checked() {
        let mut a = complete_answers("between_subjects", "dichotomous");
        let report = schema().validate_answers(&a, &[]);
        assert_eq!(report.evidence, ["evidence table has no results"]);
        a.results.push(row(&[("treatment.events", Some(3.0)), ("treatment.n", Some(2.5))]));
        let report = schema().validate_answers(&a, &[]);
        assert_eq!(report.evidence.len(), 1);
        assert!(report.evidence[0].contains("treatment.n"));
    }

    #[test]
    fn within_subjects_row_with_unreported_r() {
        let mut a = complete_answers("within_subjects", "continuous");
        a.set("outcome_units", "GDS points");
        let r = row(&[
            ("mean_pre", Some(8.0)),
            ("mean_post", Some(10.0)),
            ("sd_pre", Some(2.0)),
            ("n", Some(20.0)),
            ("r_prepost", None),
        ]);
        let table = derive_evidence_table(&a).unwrap();
        let (_, est) = row_estimate(&table, &a, &r, 0).unwrap();
        assert!((est.y - 0.96).abs() < 1e-15);
        assert!(est.correction_applied.is_some());
        assert_eq!(est.original_units.as_deref(), Some("GDS points"));
    }

    #[test]
    fn effect_metric_answers_pick_kind() {
        let mut a = complete_answers("between_subjects", "continuous");
        let t = derive_evidence_table(&a).unwrap();
        assert_eq!(effect_kind(&a, &t), EffectKind::HedgesG);
        a.set("effect_metric", "raw");
        assert_eq!(effect_kind(&a, &t), EffectKind::MeanDifference);
        a.set("outcome_kind", "dichotomous").set("dichotomous_metric", "risk_difference");
        let t = derive_evidence_table(&a).unwrap();
        assert_eq!(effect_kind(&a, &t), EffectKind::RiskDifference);
    }

    #[test]
    fn links_are_mutual() {
        let s = schema();
        assert_eq!(s.linked_question("adjusts_for_confounders"), Some("rob_confounding"));
        assert_eq!(
            s.quality_question("rob_confounding").unwrap().prompt,
            "Did the study fail to control for important confounding variables?"
        );
        for q in &s.questions {
            if let Some(other) = s.linked_question(&q.id) {
                assert_eq!(s.linked_question(other), Some(q.id.as_str()));
            }
        }
        assert_eq!(s.linked_question("title"), None);
        assert_eq!(s.linked_question("no_such_question"), None);
    }

    #[test]
    fn schema_rejects_forward_references() {
        let extraction = json!([
            {"id": "a", "section": "context", "prompt": "A?", "answer_kind": {"type": "boolean"},
             "show_if": [{"question": "b", "equals": true}],
             "manual": {"description": "d", "location": "l", "importance": "i"}},
            {"id": "b", "section": "context", "prompt": "B?", "answer_kind": {"type": "boolean"},
             "manual": {"description": "d", "location": "l", "importance": "i"}}
        ]);
        let err = FormSchema::from_json(&extraction.to_string(), "[]").unwrap_err();
        assert!(matches!(err, SchemaError::ForwardReference { .. }));
    }

    #[test]
    fn schema_rejects_empty_manual() {
        let extraction = json!([
            {"id": "study_design", "section": "context", "prompt": "Design?", "answer_kind": {"type": "text"},
             "manual": {"description": "", "location": "l", "importance": "i"}}
        ]);
        assert!(matches!(
            FormSchema::from_json(&extraction.to_string(), "[]"),
            Err(SchemaError::EmptyManual(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sample_value(kind: &AnswerKind, pick: usize) -> Value {
            match kind {
                AnswerKind::Text => json!(format!("text {pick}")),
                AnswerKind::Integer => json!(pick as i64),
                AnswerKind::Number => json!(pick as f64 / 3.0),
                AnswerKind::Boolean => json!(pick.is_multiple_of(2)),
                AnswerKind::SingleChoice { options } => json!(options[pick % options.len()]),
                AnswerKind::MultiChoice { options } => json!([options[pick % options.len()]]),
            }
        }

        fn answer_sets() -> impl Strategy<Value = AnswerSet> {
            let n = FormSchema::builtin().questions.len();
            prop::collection::vec(prop::option::of(0usize..7), n).prop_map(|picks| {
                let mut a = AnswerSet::default();
                for (q, pick) in FormSchema::builtin().questions.iter().zip(picks) {
                    if let Some(p) = pick {
                        a.set(q.id.clone(), sample_value(&q.answer_kind, p));
                    }
                }
                a
            })
        }

        proptest! {
            #[test]
            fn answering_a_mandatory_question_never_grows_missing(a in answer_sets(), pick in 0usize..7, which in any::<prop::sample::Index>()) {
                let s = FormSchema::builtin();
                let before = s.validate_answers(&a, &[]).missing;
                prop_assume!(!before.is_empty());
                let id = before[which.index(before.len())].clone();
                let mut b = a.clone();
                b.set(id.clone(), sample_value(&s.question(&id).unwrap().answer_kind, pick));
                let after = s.validate_answers(&b, &[]).missing;
                prop_assert!(after.len() < before.len() || (after.len() == before.len() && !after.contains(&id)));
                prop_assert!(after.len() <= before.len());
            }

            #[test]
            fn branch_toggle_restores_answers(a in answer_sets()) {
                let s = FormSchema::builtin();
                let visible_before: Vec<String> = s.visible_questions(&a).iter().map(|q| q.id.clone()).collect();
                let mut b = a.clone();
                let original = b.get("study_design").cloned();
                let flipped = match original.as_ref().and_then(Value::as_str) {
                    Some("between_subjects") => "within_subjects",
                    _ => "between_subjects",
                };
                b.set("study_design", flipped);
                match original {
                    Some(v) => { b.set("study_design", v); }
                    None => { b.values.remove("study_design"); }
                }
                let visible_after: Vec<String> = s.visible_questions(&b).iter().map(|q| q.id.clone()).collect();
                prop_assert_eq!(visible_before, visible_after);
                prop_assert_eq!(a, b);
            }

            #[test]
            fn visibility_is_deterministic(a in answer_sets()) {
                let s = FormSchema::builtin();
                let x: Vec<&str> = s.visible_questions(&a).iter().map(|q| q.id.as_str()).collect();
                let y: Vec<&str> = s.visible_questions(&a.clone()).iter().map(|q| q.id.as_str()).collect();
                prop_assert_eq!(x, y);
            }
        }
    }
}
