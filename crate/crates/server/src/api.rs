//! HTTP routes.
//!
//! Every mutation needs `If-Match: <revision>`; responses carry the project's
//! current revision in `ETag`. Bodies are pretty-printed JSON with a trailing
//! newline, the same bytes the CLI prints.

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use metaforge_core::analysis::{analyze, AnalysisParams, SortOrder, UnitsMode};
use metaforge_core::form::{AnswerSet, FormSchema, QualityAnswer, TableKind};
use metaforge_core::model::{Annotation, Citation, DocumentPatch, Project, ResearchQuestion, Scope};
use metaforge_core::svg;
use metaforge_core::triage::{export_csv, Flag, GroupEdit, StudyGroup, TriageAction};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::store::Store;

type Shared = State<Arc<Store>>;
type Body<T> = Result<Json<T>, JsonRejection>;

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/schema", get(schema))
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/scope", get(get_scope).put(put_scope))
        .route("/projects/{id}/documents", post(add_document).get(list_documents))
        .route("/documents/{id}", patch(patch_document).get(get_document))
        .route("/documents/{id}/answers", get(get_answers).put(put_answers))
        .route("/documents/{id}/quality", get(get_quality).put(put_quality))
        .route("/documents/{id}/annotations", post(add_annotation))
        .route("/projects/{id}/triage/actions", post(triage_action))
        .route("/projects/{id}/triage/{kind}", get(triage_table))
        .route("/projects/{id}/groups", get(get_groups))
        .route("/projects/{id}/groups/edits", post(group_edit))
        .route("/projects/{id}/analysis", get(analysis))
        .route("/projects/{id}/analysis.svg", get(analysis_svg))
        .with_state(store)
}

pub fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("response serializes");
    s.push('\n');
    s
}

fn reply<T: Serialize>(status: StatusCode, value: &T, revision: u64) -> Response {
    let mut res = (status, [(header::CONTENT_TYPE, "application/json")], pretty(value)).into_response();
    res.headers_mut().insert(header::ETAG, HeaderValue::from_str(&format!("\"{revision}\"")).expect("ascii"));
    res
}

fn body<T>(b: Body<T>) -> Result<T, ApiError> {
    b.map(|Json(v)| v).map_err(|e| match e {
        JsonRejection::JsonDataError(e) => ApiError::unprocessable(e.body_text(), vec![]),
        other => ApiError::bad_request(other.body_text()),
    })
}

fn if_match(headers: &HeaderMap) -> Result<u64, ApiError> {
    let raw = headers.get(header::IF_MATCH).ok_or_else(ApiError::precondition_required)?;
    let text = raw.to_str().map_err(|_| ApiError::bad_request("If-Match is not ASCII"))?;
    text.trim()
        .trim_start_matches("W/")
        .trim_matches('"')
        .parse()
        .map_err(|_| ApiError::bad_request(format!("If-Match must be a revision number, got '{text}'")))
}

async fn schema() -> Response {
    reply(StatusCode::OK, FormSchema::builtin(), 0)
}

#[derive(Debug, Deserialize)]
struct NewProject {
    intervention: String,
    outcome: String,
    #[serde(default)]
    topic: String,
}

#[derive(Debug, Serialize)]
struct Created<'a> {
    id: &'a str,
    question: String,
    project: &'a Project,
}

async fn create_project(State(store): Shared, b: Body<NewProject>) -> Result<Response, ApiError> {
    let req = body(b)?;
    let mut question = ResearchQuestion::new(req.intervention, req.outcome);
    question.topic = req.topic;
    let project = Project::create(question)?;
    let id = store.create(project.clone())?;
    let created = Created { id: &id, question: project.question.rendered(), project: &project };
    Ok(reply(StatusCode::CREATED, &created, project.revision))
}

async fn list_projects(State(store): Shared) -> Response {
    reply(StatusCode::OK, &store.ids(), 0)
}

async fn get_project(State(store): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    store.read(&id, |p| Ok(reply(StatusCode::OK, p, p.revision)))
}

async fn get_scope(State(store): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    store.read(&id, |p| Ok(reply(StatusCode::OK, &p.scope, p.revision)))
}

async fn put_scope(State(store): Shared, Path(id): Path<String>, headers: HeaderMap, b: Body<Scope>) -> Result<Response, ApiError> {
    let rev = if_match(&headers)?;
    let scope = body(b)?;
    let (scope, revision) = store.mutate(&id, rev, |p| {
        p.update_scope(scope)?;
        Ok(p.scope.clone())
    })?;
    Ok(reply(StatusCode::OK, &scope, revision))
}

#[derive(Debug, Deserialize)]
struct NewDocument {
    citation: Citation,
    #[serde(default)]
    file_ref: Option<String>,
}

async fn add_document(
    State(store): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    b: Body<NewDocument>,
) -> Result<Response, ApiError> {
    let rev = if_match(&headers)?;
    let req = body(b)?;
    let (doc, revision) = store.mutate(&id, rev, |p| Ok(p.add_document(req.citation, req.file_ref)?.clone()))?;
    Ok(reply(StatusCode::CREATED, &doc, revision))
}

async fn list_documents(State(store): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    store.read(&id, |p| Ok(reply(StatusCode::OK, &p.documents, p.revision)))
}

async fn get_document(State(store): Shared, Path(doc): Path<String>) -> Result<Response, ApiError> {
    let pid = store.project_of_document(&doc)?;
    store.read(&pid, |p| Ok(reply(StatusCode::OK, p.document(&doc).expect("owner holds it"), p.revision)))
}

async fn patch_document(
    State(store): Shared,
    Path(doc): Path<String>,
    headers: HeaderMap,
    b: Body<DocumentPatch>,
) -> Result<Response, ApiError> {
    let rev = if_match(&headers)?;
    let patch = body(b)?;
    let pid = store.project_of_document(&doc)?;
    let (document, revision) = store.mutate(&pid, rev, |p| {
        p.patch_document(&doc, patch)?;
        Ok(p.document(&doc).expect("exists").clone())
    })?;
    Ok(reply(StatusCode::OK, &document, revision))
}

async fn get_answers(State(store): Shared, Path(doc): Path<String>) -> Result<Response, ApiError> {
    let pid = store.project_of_document(&doc)?;
    store.read(&pid, |p| Ok(reply(StatusCode::OK, &p.answers.get(&doc).cloned().unwrap_or_default(), p.revision)))
}

async fn put_answers(
    State(store): Shared,
    Path(doc): Path<String>,
    headers: HeaderMap,
    b: Body<AnswerSet>,
) -> Result<Response, ApiError> {
    let rev = if_match(&headers)?;
    let answers = body(b)?;
    let pid = store.project_of_document(&doc)?;
    let (answers, revision) = store.mutate(&pid, rev, |p| {
        p.set_answers(&doc, answers)?;
        Ok(p.answers[&doc].clone())
    })?;
    Ok(reply(StatusCode::OK, &answers, revision))
}

async fn get_quality(State(store): Shared, Path(doc): Path<String>) -> Result<Response, ApiError> {
    let pid = store.project_of_document(&doc)?;
    store.read(&pid, |p| Ok(reply(StatusCode::OK, &p.quality.get(&doc).cloned().unwrap_or_default(), p.revision)))
}

async fn put_quality(
    State(store): Shared,
    Path(doc): Path<String>,
    headers: HeaderMap,
    b: Body<Vec<QualityAnswer>>,
) -> Result<Response, ApiError> {
    let rev = if_match(&headers)?;
    let quality = body(b)?;
    let pid = store.project_of_document(&doc)?;
    let (quality, revision) = store.mutate(&pid, rev, |p| {
        p.set_quality(&doc, quality)?;
        Ok(p.quality[&doc].clone())
    })?;
    Ok(reply(StatusCode::OK, &quality, revision))
}

async fn add_annotation(
    State(store): Shared,
    Path(doc): Path<String>,
    headers: HeaderMap,
    b: Body<Annotation>,
) -> Result<Response, ApiError> {
    let rev = if_match(&headers)?;
    let annotation = body(b)?;
    let pid = store.project_of_document(&doc)?;
    let (annotation, revision) = store.mutate(&pid, rev, |p| Ok(p.add_annotation(&doc, annotation)?.clone()))?;
    Ok(reply(StatusCode::CREATED, &annotation, revision))
}

#[derive(Debug, Deserialize)]
struct TableQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn triage_table(
    State(store): Shared,
    Path((id, kind)): Path<(String, String)>,
    Query(q): Query<TableQuery>,
) -> Result<Response, ApiError> {
    let kind: TableKind = kind.parse().map_err(|e: String| ApiError::not_found("triage table", &e))?;
    store.read(&id, |p| {
        let table = p.build_triage_table(kind);
        match q.format.as_deref() {
            None | Some("json") => Ok(reply(StatusCode::OK, &table, p.revision)),
            Some("csv") => {
                let csv = export_csv(&table).map_err(|e| ApiError::bad_request(e.to_string()))?;
                let disposition = format!("attachment; filename=\"triage_{kind}.csv\"");
                Ok((StatusCode::OK, [(header::CONTENT_TYPE, "text/csv".to_string()), (header::CONTENT_DISPOSITION, disposition)], csv)
                    .into_response())
            }
            Some(other) => Err(ApiError::bad_request(format!("unsupported format '{other}'"))),
        }
    })
}

#[derive(Debug, Serialize)]
pub struct GroupsView {
    pub revision: u64,
    pub groups: Vec<StudyGroup>,
    pub flags: Vec<Flag>,
}

impl GroupsView {
    pub fn of(p: &Project) -> Self {
        Self { revision: p.revision, groups: p.groups.clone(), flags: p.flags() }
    }
}

async fn get_groups(State(store): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    store.read(&id, |p| Ok(reply(StatusCode::OK, &GroupsView::of(p), p.revision)))
}

async fn triage_action(
    State(store): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    b: Body<TriageAction>,
) -> Result<Response, ApiError> {
    let rev = if_match(&headers)?;
    let action = body(b)?;
    let (view, revision) = store.mutate(&id, rev, |p| {
        p.apply_action(action)?;
        Ok(GroupsView::of(p))
    })?;
    Ok(reply(StatusCode::OK, &view, revision))
}

async fn group_edit(
    State(store): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
    b: Body<GroupEdit>,
) -> Result<Response, ApiError> {
    let rev = if_match(&headers)?;
    let edit = body(b)?;
    let (view, revision) = store.mutate(&id, rev, |p| {
        p.edit_groups(edit)?;
        Ok(GroupsView::of(p))
    })?;
    Ok(reply(StatusCode::OK, &view, revision))
}

/// Query string of the analysis endpoints. `include` lists the result ids
/// switched off, comma separated; absent means everything is included.
#[derive(Debug, Default, Deserialize)]
pub struct AnalysisQuery {
    #[serde(default)]
    pub include: Option<String>,
    #[serde(default)]
    pub sort: Option<String>,
    #[serde(default)]
    pub units: Option<String>,
    #[serde(default)]
    pub group: Option<String>,
}

impl AnalysisQuery {
    pub fn params(&self) -> Result<AnalysisParams, ApiError> {
        let excluded: BTreeSet<String> = self
            .include
            .iter()
            .flat_map(|s| s.split(','))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        let sort = match &self.sort {
            Some(s) => s.parse::<SortOrder>().map_err(|e| ApiError::unprocessable(e, vec!["sort".into()]))?,
            None => SortOrder::None,
        };
        let units = match &self.units {
            Some(s) => s.parse::<UnitsMode>().map_err(|e| ApiError::unprocessable(e, vec!["units".into()]))?,
            None => UnitsMode::Standardized,
        };
        Ok(AnalysisParams { excluded, sort, units, group: self.group.clone() })
    }
}

async fn analysis(State(store): Shared, Path(id): Path<String>, Query(q): Query<AnalysisQuery>) -> Result<Response, ApiError> {
    let params = q.params()?;
    store.read(&id, |p| Ok(reply(StatusCode::OK, &analyze(p, &params)?, p.revision)))
}

async fn analysis_svg(State(store): Shared, Path(id): Path<String>, Query(q): Query<AnalysisQuery>) -> Result<Response, ApiError> {
    let params = q.params()?;
    store.read(&id, |p| {
        let svg = svg::render_forest_plots(&analyze(p, &params)?);
        Ok((StatusCode::OK, [(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
    })
}
