//! Forest plots as SVG, one panel per group.
//!
//! Output depends only on the analysis response: coordinates are printed with
//! fixed precision and elements are emitted in row order, so the same
//! response always renders to the same bytes.

use std::fmt::Write;

use crate::analysis::{AnalysisResponse, AnalysisRow, GroupTable};
use crate::dotplot::{Axis, DotplotData};
use crate::effect::StudyData;

const WIDTH: f64 = 960.0;
const MARGIN: f64 = 12.0;
const COL_STATS: f64 = 230.0;
const COL_EFFECT: f64 = 470.0;
const PLOT_LEFT: f64 = 620.0;
const PLOT_RIGHT: f64 = WIDTH - 24.0;
const ROW_H: f64 = 44.0;
const TITLE_H: f64 = 34.0;
const HEADER_H: f64 = 20.0;
const AXIS_H: f64 = 34.0;
const GAP: f64 = 18.0;

const STUDY_FILL: &str = "#4a6fa5";
const POOLED_FILL: &str = "#c0504d";
const FLAG_FILL: &str = "#d08c00";

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Fixed-precision coordinate; avoids "-0.00".
fn px(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

struct Scale {
    axis: Axis,
    left: f64,
    right: f64,
}

impl Scale {
    fn x(&self, v: f64) -> f64 {
        self.left + (v - self.axis.min) / self.axis.span() * (self.right - self.left)
    }
}

/// Round tick positions covering the axis, 1/2/5 × 10^k apart.
fn ticks(axis: Axis) -> Vec<f64> {
    let raw = axis.span() / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (axis.min / step).ceil() as i64;
    let last = (axis.max / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn arm_stats(data: &Option<StudyData>) -> String {
    match data {
        Some(StudyData::Continuous { treatment: t, control: c }) => format!(
            "{} ({}) n={} vs {} ({}) n={}",
            num(t.mean),
            num(t.sd),
            t.n,
            num(c.mean),
            num(c.sd),
            c.n
        ),
        Some(StudyData::Dichotomous { treatment: t, control: c }) => {
            format!("{}/{} vs {}/{}", t.events, t.n, c.events, c.n)
        }
        Some(StudyData::PrePost { pre_mean, post_mean, sd_pre, n, .. }) => {
            format!("pre {} ({}) post {} n={}", num(*pre_mean), num(*sd_pre), num(*post_mean), n)
        }
        None => "statistics unavailable".into(),
    }
}

fn dots(out: &mut String, d: &DotplotData, scale: &Scale, baseline: f64, r: f64, fill: &str) {
    for dot in &d.dots {
        let cx = scale.x(dot.bin_center);
        let cy = baseline - r - 2.0 * r * dot.stack_index as f64;
        let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="{}" fill="{fill}"/>"#, px(cx), px(cy), px(r));
    }
}

fn radius(table: &GroupTable, scale: &Scale) -> f64 {
    let bin_px = table
        .rows
        .iter()
        .filter_map(|r| r.dotplot.as_ref())
        .chain(table.pooled.as_ref().map(|p| &p.dotplot))
        .map(|d| d.bin_width / d.axis.span() * (scale.right - scale.left))
        .fold(f64::INFINITY, f64::min);
    let tallest = table
        .rows
        .iter()
        .filter_map(|r| r.dotplot.as_ref())
        .chain(table.pooled.as_ref().map(|p| &p.dotplot))
        .map(DotplotData::max_stack)
        .max()
        .unwrap_or(1)
        .max(1);
    let vertical = (ROW_H - 6.0) / (2.0 * tallest as f64);
    bin_px.min(2.0 * vertical).min(12.0) / 2.0
}

fn flag_glyph(out: &mut String, x: f64, y: f64, note: &str) {
    let _ = writeln!(
        out,
        r#"<g class="flag"><title>{}</title><path d="M{} {} v-14 l10 4 l-10 4" fill="{FLAG_FILL}" stroke="{FLAG_FILL}"/></g>"#,
        esc(note),
        px(x),
        px(y)
    );
}

fn row(out: &mut String, r: &AnalysisRow, top: f64, scale: &Scale, radius: f64) {
    let baseline = top + ROW_H - 4.0;
    let text_y = top + ROW_H / 2.0 + 4.0;
    let opacity = if r.included { "1" } else { "0.35" };
    let _ = writeln!(out, r#"<g class="study-row" data-result="{}" opacity="{opacity}">"#, esc(&r.result_id));
    let mut label = r.citation.clone();
    if !r.label.is_empty() {
        label = format!("{label}, {}", r.label);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, px(MARGIN + 16.0), px(text_y), esc(&label));
    if let Some(note) = &r.flag {
        flag_glyph(out, MARGIN, text_y + 2.0, note);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, px(COL_STATS), px(text_y), esc(&arm_stats(&r.data)));

    match (&r.original, r.y, r.se) {
        (Some(o), _, _) => {
            let effect = format!("{} {} (se {})", num(o.y), esc(&o.units), num(o.se));
            let _ = writeln!(out, r#"<text x="{}" y="{}">{effect}</text>"#, px(COL_EFFECT), px(text_y));
            if let (Some(d), Some(axis)) = (&o.dotplot, o.axis) {
                let own = Scale { axis, left: scale.left, right: scale.right };
                let r_own = (d.bin_width / axis.span() * (own.right - own.left))
                    .min((ROW_H - 12.0) / d.max_stack().max(1) as f64)
                    .min(12.0)
                    / 2.0;
                dots(out, d, &own, baseline - 8.0, r_own, STUDY_FILL);
                for (v, anchor) in [(axis.min, "start"), (axis.max, "end")] {
                    let _ = writeln!(
                        out,
                        r#"<text class="row-axis" x="{}" y="{}" text-anchor="{anchor}" font-size="9">{}</text>"#,
                        px(own.x(v)),
                        px(baseline + 2.0),
                        num(v)
                    );
                }
            }
        }
        (None, Some(y), Some(se)) => {
            let effect = format!("{} [{}, {}]", num(y), num(y - crate::normal::Z_975 * se), num(y + crate::normal::Z_975 * se));
            let _ = writeln!(out, r#"<text x="{}" y="{}">{effect}</text>"#, px(COL_EFFECT), px(text_y));
            match &r.dotplot {
                Some(d) => dots(out, d, scale, baseline, radius, STUDY_FILL),
                None => {
                    let _ = writeln!(
                        out,
                        r#"<line class="point" x1="{x}" x2="{x}" y1="{}" y2="{}" stroke="{STUDY_FILL}" stroke-width="2"/>"#,
                        px(top + 8.0),
                        px(baseline),
                        x = px(scale.x(y))
                    );
                }
            }
        }
        _ => {
            let msg = r.warnings.first().map(String::as_str).unwrap_or("no estimate");
            let _ = writeln!(out, r#"<text x="{}" y="{}" font-style="italic">{}</text>"#, px(COL_EFFECT), px(text_y), esc(msg));
        }
    }
    out.push_str("</g>\n");
}

fn panel(out: &mut String, table: &GroupTable, top: f64) -> f64 {
    let mut y = top;
    let subtitle = if table.meta_analyzed { "" } else { " (shown, not meta-analyzed)" };
    let _ = writeln!(out, r#"<g class="forest-plot" data-group="{}">"#, esc(&table.name));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="16" font-weight="bold">{}{subtitle}</text>"#,
        px(MARGIN),
        px(y + 22.0),
        esc(&table.name)
    );
    y += TITLE_H;
    for (x, head) in [(MARGIN + 16.0, "Study"), (COL_STATS, "Treatment vs control"), (COL_EFFECT, "Effect")] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-weight="bold">{head}</text>"#, px(x), px(y + 14.0));
    }
    y += HEADER_H;
    let Some(axis) = table.axis else {
        let _ = writeln!(out, r#"<text x="{}" y="{}">no results</text>"#, px(MARGIN + 16.0), px(y + 16.0));
        out.push_str("</g>\n");
        return y + ROW_H - top;
    };
    let scale = Scale { axis, left: PLOT_LEFT, right: PLOT_RIGHT };
    let r = radius(table, &scale);
    let rows_top = y;
    for row_data in &table.rows {
        row(out, row_data, y, &scale, r);
        y += ROW_H;
    }
    if let Some(p) = &table.pooled {
        let text_y = y + ROW_H / 2.0 + 4.0;
        let _ = writeln!(out, r#"<g class="pooled-row">"#);
        let _ = writeln!(
            out,
            r#"<line x1="{}" x2="{}" y1="{}" y2="{}" stroke="darkgray"/>"#,
            px(MARGIN),
            px(PLOT_RIGHT),
            px(y),
            px(y)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-weight="bold">Pooled, random effects (k={})</text>"#,
            px(MARGIN + 16.0),
            px(text_y),
            p.result.k
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">tau2={} I2={}</text>"#,
            px(COL_STATS),
            px(text_y),
            num(p.result.tau2),
            num(p.result.i2)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-weight="bold">{} [{}, {}]</text>"#,
            px(COL_EFFECT),
            px(text_y),
            num(p.result.mu),
            num(p.result.ci95.0),
            num(p.result.ci95.1)
        );
        dots(out, &p.dotplot, &scale, y + ROW_H - 4.0, r, POOLED_FILL);
        out.push_str("</g>\n");
        y += ROW_H;
    } else if let Some(msg) = &table.message {
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-style="italic">{}</text>"#, px(MARGIN + 16.0), px(y + 18.0), esc(msg));
        y += 24.0;
    }

    if axis.contains(0.0) {
        let _ = writeln!(
            out,
            r#"<line class="zero" x1="{x}" x2="{x}" y1="{}" y2="{}" stroke="dimgray" stroke-dasharray="3 3"/>"#,
            px(rows_top),
            px(y),
            x = px(scale.x(0.0))
        );
    }
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{}" x2="{}" y1="{}" y2="{}" stroke="black"/>"#,
        px(PLOT_LEFT),
        px(PLOT_RIGHT),
        px(y + 2.0),
        px(y + 2.0)
    );
    for t in ticks(axis) {
        let x = px(scale.x(t));
        let _ = writeln!(out, r#"<line x1="{x}" x2="{x}" y1="{}" y2="{}" stroke="black"/>"#, px(y + 2.0), px(y + 7.0));
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            px(y + 19.0),
            num(t)
        );
    }
    y += AXIS_H;
    out.push_str("</g>\n");
    y - top
}

fn document(body: &str, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n{body}</svg>\n",
        w = px(WIDTH),
        h = px(height)
    )
}

/// One SVG with a forest plot panel per group, in response order.
pub fn render_forest_plots(response: &AnalysisResponse) -> String {
    let mut body = String::new();
    let mut y = MARGIN;
    for table in &response.groups {
        y += panel(&mut body, table, y) + GAP;
    }
    document(&body, y)
}

/// A standalone SVG for a single group.
pub fn render_group(table: &GroupTable) -> String {
    let mut body = String::new();
    let h = panel(&mut body, table, MARGIN);
    document(&body, h + 2.0 * MARGIN)
}
