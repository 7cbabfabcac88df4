//! Per-group analysis tables: one row per study result with its quantile
//! dotplot, plus a pooled row for groups that are meta-analyzed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dotplot::{self, Axis, DotplotData};
use crate::effect::{to_original_units, EffectKind, StudyData};
use crate::meta::{pool_random_effects, PoolError, PooledResult, StudyEstimate};
use crate::model::Project;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    #[default]
    None,
    Effect,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitsMode {
    #[default]
    Standardized,
    Original,
}

macro_rules! parse_by_name {
    ($ty:ty, $($name:literal => $val:expr),+) => {
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($val),)+
                    other => Err(format!("unexpected value '{other}'")),
                }
            }
        }
    };
}

parse_by_name!(SortOrder, "none" => SortOrder::None, "effect" => SortOrder::Effect);
parse_by_name!(UnitsMode, "standardized" => UnitsMode::Standardized, "original" => UnitsMode::Original);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    /// Result ids left out of pooling (the sensitivity toggles).
    #[serde(default)]
    pub excluded: BTreeSet<String>,
    #[serde(default)]
    pub sort: SortOrder,
    #[serde(default)]
    pub units: UnitsMode,
    /// Restrict the response to one group.
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("unknown result '{0}'")]
    UnknownResult(String),
    #[error("unknown group '{0}'")]
    UnknownGroup(String),
}

/// Everything needed to render one result row, independent of a project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowInput {
    pub result_id: String,
    #[serde(default)]
    pub document_id: String,
    pub citation: String,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub timepoint: Option<String>,
    /// `None` when the row's statistics are missing or invalid; see `problem`.
    pub data: Option<StudyData>,
    pub kind: Option<EffectKind>,
    #[serde(default)]
    pub units: Option<String>,
    #[serde(default)]
    pub flag: Option<String>,
    #[serde(default)]
    pub problem: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalValues {
    pub kind: EffectKind,
    pub y: f64,
    pub v: f64,
    pub se: f64,
    pub units: String,
    /// This row's own scale.
    pub axis: Option<Axis>,
    pub dotplot: Option<DotplotData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub result_id: String,
    pub document_id: String,
    pub citation: String,
    pub label: String,
    pub timepoint: Option<String>,
    pub data: Option<StudyData>,
    pub kind: Option<EffectKind>,
    pub y: Option<f64>,
    pub v: Option<f64>,
    pub se: Option<f64>,
    pub included: bool,
    pub dotplot: Option<DotplotData>,
    pub flag: Option<String>,
    pub warnings: Vec<String>,
    /// Present in original-units mode for rows that convert.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<OriginalValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convertible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledRow {
    #[serde(flatten)]
    pub result: PooledResult,
    pub dotplot: DotplotData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    pub name: String,
    pub meta_analyzed: bool,
    pub axis: Option<Axis>,
    pub rows: Vec<AnalysisRow>,
    pub pooled: Option<PooledRow>,
    /// Why a meta-analyzed group has no pooled row.
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResponse {
    pub revision: u64,
    pub groups: Vec<GroupTable>,
    /// Applied mask, result id → included in pooling.
    pub include_mask: BTreeMap<String, bool>,
    pub sort: SortOrder,
    pub units: UnitsMode,
}

impl AnalysisResponse {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("response serializes");
        s.push('\n');
        s
    }

    pub fn group(&self, name: &str) -> Option<&GroupTable> {
        self.groups.iter().find(|g| g.name == name)
    }
}

pub fn analyze(project: &Project, params: &AnalysisParams) -> Result<AnalysisResponse, AnalysisError> {
    if let Some(unknown) = params.excluded.iter().find(|id| !project.result_exists(id)) {
        return Err(AnalysisError::UnknownResult(unknown.clone()));
    }
    if let Some(name) = &params.group {
        if !project.groups.iter().any(|g| &g.name == name) {
            return Err(AnalysisError::UnknownGroup(name.clone()));
        }
    }
    let mut groups = Vec::new();
    let mut include_mask = BTreeMap::new();
    for g in project.groups.iter().filter(|g| params.group.as_ref().is_none_or(|n| n == &g.name)) {
        let inputs: Vec<RowInput> = g.members.iter().map(|id| row_input(project, id)).collect();
        let table = build_group_table(&g.name, g.meta_analyzed, inputs, params);
        for row in &table.rows {
            include_mask.insert(row.result_id.clone(), row.included);
        }
        groups.push(table);
    }
    Ok(AnalysisResponse { revision: project.revision, groups, include_mask, sort: params.sort, units: params.units })
}

fn row_input(project: &Project, result_id: &str) -> RowInput {
    let r = project.result(result_id).expect("group members are project results");
    let (data, kind, units, problem) = match project.estimate(result_id) {
        Some(Ok((data, est))) => (Some(data), Some(est.kind), est.original_units, None),
        Some(Err(e)) => (None, None, None, Some(e.to_string())),
        None => (None, None, None, Some("no extraction answers".to_string())),
    };
    RowInput {
        result_id: result_id.to_string(),
        document_id: r.document.id.clone(),
        citation: r.document.citation.short(),
        label: r.row.label.clone(),
        timepoint: r.row.timepoint.clone(),
        data,
        kind,
        units,
        flag: project.triage.flag_note(result_id).map(String::from),
        problem,
    }
}

/// Rows, shared axis and (for meta-analyzed groups) the pooled row of one group.
pub fn build_group_table(name: &str, meta_analyzed: bool, inputs: Vec<RowInput>, params: &AnalysisParams) -> GroupTable {
    let mut rows: Vec<AnalysisRow> = inputs.into_iter().map(|input| base_row(input, params)).collect();

    let mut pooled = None;
    let mut message = None;
    if meta_analyzed {
        let estimates: Vec<StudyEstimate> = rows
            .iter()
            .filter(|r| r.included)
            .filter_map(|r| match (r.kind, r.y, r.v) {
                (Some(kind), Some(y), Some(v)) if v > 0.0 => Some(StudyEstimate::new(&r.result_id, kind, y, v)),
                _ => None,
            })
            .collect();
        match pool_random_effects(&estimates) {
            Ok(result) => pooled = Some(result),
            Err(PoolError::EmptyGroup) => message = Some("no included results to pool".to_string()),
            Err(e) => message = Some(e.to_string()),
        }
    }

    let pooled_quantiles = pooled.as_ref().map(|p| dotplot::sampling_quantiles(p.mu, p.se).expect("pooled se > 0"));
    let row_quantiles: Vec<Option<Vec<f64>>> = rows
        .iter()
        .map(|r| match (r.y, r.se) {
            (Some(y), Some(se)) if se > 0.0 => dotplot::sampling_quantiles(y, se).ok(),
            _ => None,
        })
        .collect();
    let mut extent: Vec<f64> = row_quantiles.iter().flatten().flatten().copied().collect();
    extent.extend(rows.iter().filter_map(|r| r.y));
    extent.extend(pooled_quantiles.iter().flatten().copied());
    let axis = Axis::covering(&extent).ok();

    if let Some(axis) = axis {
        for (row, q) in rows.iter_mut().zip(row_quantiles) {
            row.dotplot = q.and_then(|q| dotplot::layout_dots(&q, axis).ok());
        }
    }
    let pooled = pooled.zip(pooled_quantiles).map(|(result, q)| PooledRow {
        result,
        dotplot: dotplot::layout_dots(&q, axis.expect("axis covers pooled quantiles")).expect("quantiles inside axis"),
    });

    if params.sort == SortOrder::Effect {
        rows.sort_by(|a, b| {
            let ya = a.y.unwrap_or(f64::INFINITY);
            let yb = b.y.unwrap_or(f64::INFINITY);
            ya.total_cmp(&yb).then_with(|| a.result_id.cmp(&b.result_id))
        });
    }

    GroupTable { name: name.to_string(), meta_analyzed, axis, rows, pooled, message }
}

fn base_row(input: RowInput, params: &AnalysisParams) -> AnalysisRow {
    let mut warnings: Vec<String> = input.problem.iter().cloned().collect();
    let estimate = match (&input.data, input.kind) {
        (Some(data), Some(kind)) => match data.estimate(kind) {
            Ok(mut est) => {
                est.original_units = input.units.clone();
                Some((data, est))
            }
            Err(e) => {
                warnings.push(e.to_string());
                None
            }
        },
        _ => None,
    };
    if let Some((_, est)) = &estimate {
        if let Some(note) = &est.correction_applied {
            warnings.push(note.clone());
        }
        if !est.is_poolable() {
            warnings.push("zero sampling variance; shown but not pooled".to_string());
        }
    }

    let (original, convertible) = match (params.units, &estimate) {
        (UnitsMode::Original, Some((data, est))) => match to_original_units(est, data) {
            Some(o) => {
                let se = o.v.sqrt();
                let quantiles = (se > 0.0).then(|| dotplot::sampling_quantiles(o.y, se).ok()).flatten();
                let axis = match &quantiles {
                    Some(q) => Axis::covering(q).ok(),
                    None => Axis::covering([o.y].iter()).ok(),
                };
                let dotplot = quantiles.zip(axis).and_then(|(q, axis)| dotplot::layout_dots(&q, axis).ok());
                (Some(OriginalValues { kind: o.kind, y: o.y, v: o.v, se, units: o.units, axis, dotplot }), Some(true))
            }
            None => (None, Some(false)),
        },
        (UnitsMode::Original, None) => (None, Some(false)),
        (UnitsMode::Standardized, _) => (None, None),
    };

    AnalysisRow {
        included: !params.excluded.contains(&input.result_id),
        result_id: input.result_id,
        document_id: input.document_id,
        citation: input.citation,
        label: input.label,
        timepoint: input.timepoint,
        kind: estimate.as_ref().map(|(_, e)| e.kind).or(input.kind),
        y: estimate.as_ref().map(|(_, e)| e.y),
        v: estimate.as_ref().map(|(_, e)| e.v),
        se: estimate.as_ref().map(|(_, e)| e.se()),
        data: input.data,
        dotplot: None,
        flag: input.flag,
        warnings,
        original,
        convertible,
    }
}
