#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use metaforge::Store;
use serde_json::{json, Value};
use tower::ServiceExt;

/// Continuous arm statistics: treatment mean, sd, n then control mean, sd, n.
pub type Arms = (f64, f64, u32, f64, f64, u32);

/// A complete between-subjects continuous answer set with one evidence row.
pub fn answers(title: &str, arms: Arms, metric: &str) -> Value {
    let (tm, tsd, tn, cm, csd, cn) = arms;
    json!({
        "values": {
            "authors": format!("{title} Author"),
            "year": 2020,
            "title": title,
            "study_design": "between_subjects",
            "assignment_method": "randomized",
            "setting": "community",
            "adjusts_for_confounders": false,
            "intervention_description": "Companion robot sessions",
            "population_description": "Older adults",
            "clinical_condition": "no",
            "sample_size_total": tn + cn,
            "outcome_name": "Depressive symptoms",
            "outcome_kind": "continuous",
            "measurement_instrument": "GDS-15",
            "higher_is_better": false,
            "outcome_units": "GDS points",
            "effect_metric": metric,
            "statistics_source": "table"
        },
        "results": [{
            "label": "post-test",
            "stats": {
                "treatment.mean": tm, "treatment.sd": tsd, "treatment.n": tn,
                "control.mean": cm, "control.sd": csd, "control.n": cn
            }
        }]
    })
}

pub struct Api {
    pub router: Router,
}

pub struct Reply {
    pub status: StatusCode,
    pub etag: Option<u64>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

impl Api {
    pub fn new() -> Self {
        Self { router: metaforge::router(Arc::new(Store::new(None))) }
    }

    pub fn with_store(store: Arc<Store>) -> Self {
        Self { router: metaforge::router(store) }
    }

    pub async fn send(&self, method: Method, uri: &str, revision: Option<u64>, body: Option<Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(rev) = revision {
            req = req.header(header::IF_MATCH, format!("\"{rev}\""));
        }
        let req = match body {
            Some(v) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(v.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let res = self.router.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let etag = res
            .headers()
            .get(header::ETAG)
            .and_then(|v| v.to_str().ok())
            .and_then(|s| s.trim_matches('"').parse().ok());
        let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, etag, body }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.send(Method::GET, uri, None, None).await
    }

    /// Mutation at the project's current revision; panics unless it succeeds.
    pub async fn ok(&self, method: Method, uri: &str, rev: &mut u64, body: Value) -> Value {
        let r = self.send(method, uri, Some(*rev), Some(body)).await;
        assert!(r.status.is_success(), "{uri}: {} {}", r.status, r.text());
        *rev = r.etag.expect("etag");
        r.json()
    }
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_metaforge"))
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

/// Runs the CLI and returns stdout, panicking with stderr on failure.
pub fn cli_ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

pub fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, value.to_string()).unwrap();
    path
}

/// Adds a complete document through the CLI and returns its result id.
pub fn cli_add_study(dir: &Path, project: &str, title: &str, arms: Arms, metric: &str) -> (String, String) {
    let doc = cli_ok(&["doc", "add", "--project", project, "--authors", &format!("{title} Author"), "--year", "2020", "--title", title])
        .trim()
        .to_string();
    let file = write_json(dir, &format!("{doc}.json"), &answers(title, arms, metric));
    let saved: Value =
        serde_json::from_str(&cli_ok(&["doc", "answers", "--project", project, "--id", &doc, "--file", file.to_str().unwrap()]))
            .unwrap();
    cli_ok(&["doc", "status", "--project", project, "--id", &doc, "--status", "complete"]);
    let result = saved["results"][0]["id"].as_str().unwrap().to_string();
    (doc, result)
}
