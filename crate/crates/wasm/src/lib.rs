//! Browser entry points. Each export takes and returns JSON strings so the
//! page can stay plain JavaScript.

use metaforge_core::analysis::{build_group_table, AnalysisParams, RowInput};
use metaforge_core::dotplot::{self, count_beyond, Axis, Direction};
use metaforge_core::effect::StudyData;
use metaforge_core::svg::render_group;
use metaforge_core::EffectKind;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
pub struct ForestRequest {
    #[serde(default = "default_name")]
    pub name: String,
    pub rows: Vec<RowInput>,
    #[serde(default)]
    pub params: AnalysisParams,
}

fn default_name() -> String {
    "main analysis".to_string()
}

#[derive(Debug, Serialize)]
pub struct ForestReply {
    pub svg: String,
    pub table: metaforge_core::analysis::GroupTable,
}

/// Pool the given rows, leaving out `params.excluded`, and draw the plot.
pub fn forest(request: &str) -> Result<String, String> {
    let req: ForestRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let table = build_group_table(&req.name, true, req.rows, &req.params);
    let reply = ForestReply { svg: render_group(&table), table };
    serde_json::to_string(&reply).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct DotplotReply {
    pub data: dotplot::DotplotData,
    pub below: usize,
    pub above: usize,
}

/// Twenty-dot plot of N(mean, se²) with counts on either side of `x0`.
pub fn dots(mean: f64, se: f64, x0: f64) -> Result<String, String> {
    let q = dotplot::sampling_quantiles(mean, se).map_err(|e| e.to_string())?;
    let axis = Axis::covering(q.iter().chain([&x0])).map_err(|e| e.to_string())?;
    let data = dotplot::layout_dots(&q, axis).map_err(|e| e.to_string())?;
    let reply = DotplotReply { below: count_beyond(&q, x0, Direction::Below), above: count_beyond(&q, x0, Direction::Above), data };
    serde_json::to_string(&reply).map_err(|e| e.to_string())
}

/// Effect size for one study; `kind` is "MD", "SMD_g", "RD" or "lnOR".
pub fn effect(data: &str, kind: &str) -> Result<String, String> {
    let data: StudyData = serde_json::from_str(data).map_err(|e| e.to_string())?;
    let kind: EffectKind = serde_json::from_value(serde_json::Value::String(kind.into())).map_err(|e| e.to_string())?;
    let est = data.estimate(kind).map_err(|e| e.to_string())?;
    serde_json::to_string(&est).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = forestPlot)]
pub fn forest_js(request: &str) -> Result<String, JsError> {
    forest(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = dotplot)]
pub fn dots_js(mean: f64, se: f64, x0: f64) -> Result<String, JsError> {
    dots(mean, se, x0).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = effectSize)]
pub fn effect_js(data: &str, kind: &str) -> Result<String, JsError> {
    effect(data, kind).map_err(|e| JsError::new(&e))
}
