use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use metaforge_core::analysis::{analyze, AnalysisError, AnalysisParams, AnalysisResponse, SortOrder, UnitsMode};
use metaforge_core::form::{AnswerSet, QualityAnswer, TableKind};
use metaforge_core::model::{self, Citation, Project, ProjectError, ResearchQuestion, ReviewStatus, Scope};
use metaforge_core::svg;
use metaforge_core::triage::{export_csv, Choice, GroupEdit, TriageAction};
use thiserror::Error;

use crate::store::Store;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}: {1}")]
    Json(String, serde_json::Error),
    #[error("csv export failed: {0}")]
    Csv(String),
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "metaforge", version, about = "Guided meta-analysis projects from the command line")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a project file for a research question.
    Init {
        #[arg(long)]
        question_intervention: String,
        #[arg(long)]
        question_outcome: String,
        #[arg(long, default_value = "")]
        topic: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace the project's scope.
    Scope {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long = "criterion")]
        criteria: Vec<String>,
        #[arg(long = "confounder")]
        confounders: Vec<String>,
        #[arg(long, default_value = "")]
        target_context: String,
    },
    #[command(subcommand)]
    Doc(DocCommand),
    #[command(subcommand)]
    Triage(TriageCommand),
    #[command(subcommand)]
    Groups(GroupsCommand),
    /// Per-group forest plot tables with pooled estimates.
    Analyze {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        group: Option<String>,
        /// Leave a result out of pooling; repeatable.
        #[arg(long = "exclude")]
        exclude: Vec<String>,
        #[arg(long, default_value = "none")]
        sort: SortOrder,
        #[arg(long, default_value = "standardized")]
        units: UnitsMode,
        /// Print the full response as JSON.
        #[arg(long)]
        json: bool,
        /// Write the forest plots to this SVG file.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Serve the HTTP API over a project file.
    Serve {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long, env = "METAFORGE_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Args)]
pub struct ProjectArg {
    #[arg(long = "project")]
    pub path: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DocCommand {
    /// Register a document; prints its id.
    Add {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        authors: String,
        #[arg(long)]
        year: i32,
        #[arg(long)]
        title: String,
        #[arg(long)]
        file_ref: Option<String>,
    },
    List {
        #[command(flatten)]
        project: ProjectArg,
    },
    /// Replace a document's extraction answers from a JSON file ("-" reads stdin).
    Answers {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        id: String,
        #[arg(long)]
        file: PathBuf,
    },
    /// Replace a document's quality answers from a JSON file ("-" reads stdin).
    Quality {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        id: String,
        #[arg(long)]
        file: PathBuf,
    },
    Status {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        id: String,
        #[arg(long, value_parser = parse_status)]
        status: ReviewStatus,
    },
    /// Flip provisional inclusion.
    Toggle {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum TriageCommand {
    /// Write `triage_<kind>.csv`.
    Export {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        kind: TableKind,
        /// Output directory (default: current directory).
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    Action {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        result: String,
        #[arg(long)]
        kind: TableKind,
        #[arg(long)]
        choice: Choice,
        #[arg(long)]
        note: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum GroupsCommand {
    List {
        #[command(flatten)]
        project: ProjectArg,
    },
    Create {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        name: String,
    },
    Rename {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    Delete {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        name: String,
    },
    Move {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        result: String,
        #[arg(long)]
        to: String,
    },
}

fn parse_status(s: &str) -> Result<ReviewStatus, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("expected not_started, in_progress or complete, got '{s}'"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(io_err(path))?;
        s
    } else {
        fs::read_to_string(path).map_err(io_err(path))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Json(path.display().to_string(), e))
}

fn edit(project: &ProjectArg, f: impl FnOnce(&mut Project) -> Result<(), CliError>) -> Result<Project, CliError> {
    let mut p = model::load_project(&project.path)?;
    f(&mut p)?;
    model::save_project(&p, &project.path)?;
    Ok(p)
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    crate::api::pretty(value)
}

/// Text summary: one block per group.
pub fn summary(response: &AnalysisResponse) -> String {
    let mut out = String::new();
    for g in &response.groups {
        out.push_str(&format!("== {} ==\n", g.name));
        for r in &g.rows {
            let mark = if r.included { ' ' } else { '-' };
            let flag = if r.flag.is_some() { " [flag]" } else { "" };
            match (r.y, r.se) {
                (Some(y), Some(se)) => out.push_str(&format!(
                    "{mark} {} {}: y={y:.6} se={se:.6}{flag}\n",
                    r.result_id, r.citation
                )),
                _ => out.push_str(&format!("{mark} {} {}: no estimate{flag}\n", r.result_id, r.citation)),
            }
        }
        match (&g.pooled, &g.message) {
            (Some(p), _) => {
                let p = &p.result;
                out.push_str(&format!(
                    "pooled {} k={}: mu={:.6} se={:.6} ci95=[{:.6}, {:.6}] tau2={:.6} Q={:.6} I2={:.6}\n",
                    p.kind, p.k, p.mu, p.se, p.ci95.0, p.ci95.1, p.tau2, p.q, p.i2
                ));
            }
            (None, Some(msg)) => out.push_str(&format!("not pooled: {msg}\n")),
            (None, None) => out.push_str("shown, not meta-analyzed\n"),
        }
    }
    out
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let w = |out: &mut dyn Write, s: &str| out.write_all(s.as_bytes()).map_err(io_err(Path::new("<stdout>")));
    match cli.command {
        Command::Init { question_intervention, question_outcome, topic, out: path } => {
            let mut q = ResearchQuestion::new(question_intervention, question_outcome);
            q.topic = topic;
            let p = Project::create(q)?;
            model::save_project(&p, &path)?;
            w(out, &format!("{}\n", p.question.rendered()))
        }
        Command::Scope { project, criteria, confounders, target_context } => {
            let p = edit(&project, |p| Ok(p.update_scope(Scope { criteria, confounders, target_context })?))?;
            w(out, &pretty(&p.scope))
        }
        Command::Doc(cmd) => run_doc(cmd, out),
        Command::Triage(TriageCommand::Export { project, kind, out_dir }) => {
            let p = model::load_project(&project.path)?;
            let csv = export_csv(&p.build_triage_table(kind)).map_err(|e| CliError::Csv(e.to_string()))?;
            let path = out_dir.join(format!("triage_{kind}.csv"));
            fs::write(&path, csv).map_err(io_err(&path))?;
            w(out, &format!("{}\n", path.display()))
        }
        Command::Triage(TriageCommand::Action { project, result, kind, choice, note }) => {
            let mut action = TriageAction::new(result, kind, choice);
            action.note = note;
            let p = edit(&project, |p| Ok(p.apply_action(action)?))?;
            w(out, &pretty(&crate::api::GroupsView::of(&p)))
        }
        Command::Groups(cmd) => {
            let (project, edit_op) = match cmd {
                GroupsCommand::List { project } => {
                    let p = model::load_project(&project.path)?;
                    return w(out, &pretty(&crate::api::GroupsView::of(&p)));
                }
                GroupsCommand::Create { project, name } => (project, GroupEdit::Create { name }),
                GroupsCommand::Rename { project, from, to } => (project, GroupEdit::Rename { from, to }),
                GroupsCommand::Delete { project, name } => (project, GroupEdit::Delete { name }),
                GroupsCommand::Move { project, result, to } => (project, GroupEdit::Move { result_id: result, to }),
            };
            let p = edit(&project, |p| Ok(p.edit_groups(edit_op)?))?;
            w(out, &pretty(&crate::api::GroupsView::of(&p)))
        }
        Command::Analyze { project, group, exclude, sort, units, json, svg: svg_path } => {
            let p = model::load_project(&project.path)?;
            let params = AnalysisParams { excluded: exclude.into_iter().collect::<BTreeSet<_>>(), sort, units, group };
            let response = analyze(&p, &params)?;
            if let Some(path) = &svg_path {
                fs::write(path, svg::render_forest_plots(&response)).map_err(io_err(path))?;
            }
            if json {
                w(out, &response.to_json())
            } else if svg_path.is_none() {
                w(out, &summary(&response))
            } else {
                Ok(())
            }
        }
        Command::Serve { project, port, host } => serve(&project.path, &host, port),
    }
}

fn run_doc(cmd: DocCommand, out: &mut dyn Write) -> Result<(), CliError> {
    let mut w = |s: String| out.write_all(s.as_bytes()).map_err(io_err(Path::new("<stdout>")));
    match cmd {
        DocCommand::Add { project, authors, year, title, file_ref } => {
            let mut id = String::new();
            let mut duplicate = None;
            edit(&project, |p| {
                let d = p.add_document(Citation::new(authors, year, title), file_ref)?;
                id = d.id.clone();
                duplicate = d.duplicate_of.clone();
                Ok(())
            })?;
            if let Some(other) = duplicate {
                eprintln!("warning: citation matches document {other}");
            }
            w(format!("{id}\n"))
        }
        DocCommand::List { project } => {
            let p = model::load_project(&project.path)?;
            w(pretty(&p.documents))
        }
        DocCommand::Answers { project, id, file } => {
            let answers: AnswerSet = read_json(&file)?;
            let p = edit(&project, |p| Ok(p.set_answers(&id, answers)?))?;
            w(pretty(&p.answers[&id]))
        }
        DocCommand::Quality { project, id, file } => {
            let quality: Vec<QualityAnswer> = read_json(&file)?;
            let p = edit(&project, |p| Ok(p.set_quality(&id, quality)?))?;
            w(pretty(&p.quality[&id]))
        }
        DocCommand::Status { project, id, status } => {
            edit(&project, |p| Ok(p.set_review_status(&id, status)?))?;
            w(format!("{id}: {}\n", serde_json::to_value(status).expect("status").as_str().unwrap_or("")))
        }
        DocCommand::Toggle { project, id } => {
            let mut now = false;
            edit(&project, |p| {
                now = p.toggle_inclusion(&id)?;
                Ok(())
            })?;
            w(format!("{id}: {}\n", if now { "included" } else { "excluded" }))
        }
    }
}

fn serve(path: &Path, host: &str, port: u16) -> Result<(), CliError> {
    let store = Arc::new(Store::new(path.parent().map(Path::to_path_buf)));
    let id = store.open(path)?;
    let runtime = tokio::runtime::Runtime::new().map_err(io_err(path))?;
    runtime.block_on(async move {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(io_err(Path::new(&addr)))?;
        eprintln!("serving project {id} on http://{}", listener.local_addr().map_err(io_err(Path::new(&addr)))?);
        axum::serve(listener, crate::api::router(store)).await.map_err(io_err(Path::new(&addr)))
    })
}
