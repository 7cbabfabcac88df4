//! Effect sizes and sampling variances for the four supported families.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EffectKind {
    /// Raw (non-standardized) mean difference.
    #[serde(rename = "MD")]
    MeanDifference,
    /// Standardized mean difference with Hedges' small-sample correction.
    #[serde(rename = "SMD_g")]
    HedgesG,
    #[serde(rename = "RD")]
    RiskDifference,
    #[serde(rename = "lnOR")]
    LogOddsRatio,
}

impl EffectKind {
    pub fn label(self) -> &'static str {
        match self {
            EffectKind::MeanDifference => "MD",
            EffectKind::HedgesG => "SMD_g",
            EffectKind::RiskDifference => "RD",
            EffectKind::LogOddsRatio => "lnOR",
        }
    }
}

impl std::fmt::Display for EffectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousArm {
    pub mean: f64,
    pub sd: f64,
    pub n: u32,
}

impl ContinuousArm {
    pub fn new(mean: f64, sd: f64, n: u32) -> Self {
        Self { mean, sd, n }
    }

    fn check(&self, arm: &str) -> Result<(), EffectError> {
        if !self.mean.is_finite() {
            return Err(EffectError::InvalidArm(format!("{arm} mean must be finite")));
        }
        if !(self.sd.is_finite() && self.sd >= 0.0) {
            return Err(EffectError::InvalidArm(format!("{arm} sd must be positive")));
        }
        if self.n < 2 {
            return Err(EffectError::InvalidArm(format!("{arm} n must be at least 2, got {}", self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DichotomousArm {
    pub events: u32,
    pub n: u32,
}

impl DichotomousArm {
    pub fn new(events: u32, n: u32) -> Self {
        Self { events, n }
    }

    fn check(&self, arm: &str) -> Result<(), EffectError> {
        if self.n == 0 {
            return Err(EffectError::InvalidArm(format!("{arm} n must be at least 1")));
        }
        if self.events > self.n {
            return Err(EffectError::InvalidArm(format!(
                "{arm} events ({}) exceed n ({})",
                self.events, self.n
            )));
        }
        Ok(())
    }

    fn proportion(&self) -> f64 {
        self.events as f64 / self.n as f64
    }
}

/// Statistics behind one study result, as entered in the evidence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum StudyData {
    Continuous {
        treatment: ContinuousArm,
        control: ContinuousArm,
    },
    Dichotomous {
        treatment: DichotomousArm,
        control: DichotomousArm,
    },
    PrePost {
        pre_mean: f64,
        post_mean: f64,
        sd_pre: f64,
        n: u32,
        /// Pre/post correlation; `None` when the article does not report it.
        r: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    pub y: f64,
    pub v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_units: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction_applied: Option<String>,
}

impl EffectEstimate {
    fn new(kind: EffectKind, y: f64, v: f64) -> Self {
        Self { kind, y, v, original_units: None, correction_applied: None }
    }

    /// Pooling needs weights 1/v, so only strictly positive finite variances qualify.
    pub fn is_poolable(&self) -> bool {
        self.y.is_finite() && self.v.is_finite() && self.v > 0.0
    }

    pub fn se(&self) -> f64 {
        self.v.sqrt()
    }
}

/// A result re-expressed in the outcome's measurement units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginalUnits {
    pub kind: EffectKind,
    pub y: f64,
    pub v: f64,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EffectError {
    #[error("invalid arm statistics: {0}")]
    InvalidArm(String),
    #[error("degenerate variance: pooled standard deviation is zero")]
    DegenerateVariance,
    #[error("invalid pre/post correlation {0}; expected a value in (-1, 1)")]
    InvalidCorrelation(f64),
    #[error("{kind} cannot be computed from {design} data")]
    UnsupportedKind { kind: EffectKind, design: &'static str },
}

pub const IMPUTED_PREPOST_R: f64 = 0.5;
const CONTINUITY: f64 = 0.5;
const DEFAULT_UNITS: &str = "points";

pub fn mean_difference(t: &ContinuousArm, c: &ContinuousArm) -> Result<EffectEstimate, EffectError> {
    t.check("treatment")?;
    c.check("control")?;
    if t.sd == 0.0 && c.sd == 0.0 {
        return Err(EffectError::DegenerateVariance);
    }
    if t.sd == 0.0 || c.sd == 0.0 {
        return Err(EffectError::InvalidArm("sd must be positive".into()));
    }
    let v = t.sd * t.sd / t.n as f64 + c.sd * c.sd / c.n as f64;
    Ok(EffectEstimate::new(EffectKind::MeanDifference, t.mean - c.mean, v))
}

/// Hedges' small-sample correction factor for `df` degrees of freedom.
fn hedges_j(df: f64) -> f64 {
    1.0 - 3.0 / (4.0 * df - 1.0)
}

pub fn standardized_mean_difference(
    t: &ContinuousArm,
    c: &ContinuousArm,
) -> Result<EffectEstimate, EffectError> {
    t.check("treatment")?;
    c.check("control")?;
    let (nt, nc) = (t.n as f64, c.n as f64);
    let df = nt + nc - 2.0;
    let sp = (((nt - 1.0) * t.sd * t.sd + (nc - 1.0) * c.sd * c.sd) / df).sqrt();
    if sp == 0.0 {
        return Err(EffectError::DegenerateVariance);
    }
    let d = (t.mean - c.mean) / sp;
    let j = hedges_j(df);
    let v = j * j * ((nt + nc) / (nt * nc) + d * d / (2.0 * (nt + nc)));
    Ok(EffectEstimate::new(EffectKind::HedgesG, j * d, v))
}

/// Risk difference. Both proportions at 0 or 1 give v = 0, which is reported
/// rather than rejected; such estimates are not poolable.
pub fn risk_difference(t: &DichotomousArm, c: &DichotomousArm) -> Result<EffectEstimate, EffectError> {
    t.check("treatment")?;
    c.check("control")?;
    let (pt, pc) = (t.proportion(), c.proportion());
    let v = pt * (1.0 - pt) / t.n as f64 + pc * (1.0 - pc) / c.n as f64;
    Ok(EffectEstimate::new(EffectKind::RiskDifference, pt - pc, v))
}

pub fn log_odds_ratio(t: &DichotomousArm, c: &DichotomousArm) -> Result<EffectEstimate, EffectError> {
    t.check("treatment")?;
    c.check("control")?;
    let mut a = t.events as f64;
    let mut b = (t.n - t.events) as f64;
    let mut c0 = c.events as f64;
    let mut d = (c.n - c.events) as f64;
    let corrected = a == 0.0 || b == 0.0 || c0 == 0.0 || d == 0.0;
    if corrected {
        a += CONTINUITY;
        b += CONTINUITY;
        c0 += CONTINUITY;
        d += CONTINUITY;
    }
    // difference of logs keeps y exactly antisymmetric under arm swap
    let y = (a * d).ln() - (b * c0).ln();
    // per-arm grouping keeps v bitwise symmetric under arm swap
    let v = (1.0 / a + 1.0 / b) + (1.0 / c0 + 1.0 / d);
    let mut est = EffectEstimate::new(EffectKind::LogOddsRatio, y, v);
    if corrected {
        est.correction_applied = Some("0.5 continuity correction added to all cells (zero cell)".into());
    }
    Ok(est)
}

/// Hedges-corrected standardized mean change for a pre/post design.
pub fn standardized_mean_change(
    pre_mean: f64,
    post_mean: f64,
    sd_pre: f64,
    n: u32,
    r: Option<f64>,
) -> Result<EffectEstimate, EffectError> {
    if !(pre_mean.is_finite() && post_mean.is_finite()) {
        return Err(EffectError::InvalidArm("pre/post means must be finite".into()));
    }
    if !(sd_pre.is_finite() && sd_pre >= 0.0) {
        return Err(EffectError::InvalidArm("sd_pre must be positive".into()));
    }
    if n < 2 {
        return Err(EffectError::InvalidArm(format!("n must be at least 2, got {n}")));
    }
    if sd_pre == 0.0 {
        return Err(EffectError::DegenerateVariance);
    }
    let r_used = match r {
        Some(r) if r > -1.0 && r < 1.0 => r,
        Some(r) => return Err(EffectError::InvalidCorrelation(r)),
        None => IMPUTED_PREPOST_R,
    };
    let n_f = n as f64;
    let d = (post_mean - pre_mean) / sd_pre;
    let j = hedges_j(n_f - 1.0);
    let v = j * j * (2.0 * (1.0 - r_used) / n_f + d * d / (2.0 * n_f));
    let mut est = EffectEstimate::new(EffectKind::HedgesG, j * d, v);
    if r.is_none() {
        est.correction_applied = Some(format!(
            "pre/post correlation not reported; r = {IMPUTED_PREPOST_R} imputed"
        ));
    }
    Ok(est)
}

impl StudyData {
    pub fn design_label(&self) -> &'static str {
        match self {
            StudyData::Continuous { .. } => "between-subjects continuous",
            StudyData::Dichotomous { .. } => "between-subjects dichotomous",
            StudyData::PrePost { .. } => "within-subjects continuous",
        }
    }

    /// Effect kinds this data can produce; the first is the default.
    pub fn supported_kinds(&self) -> &'static [EffectKind] {
        match self {
            StudyData::Continuous { .. } => &[EffectKind::HedgesG, EffectKind::MeanDifference],
            StudyData::Dichotomous { .. } => &[EffectKind::LogOddsRatio, EffectKind::RiskDifference],
            StudyData::PrePost { .. } => &[EffectKind::HedgesG],
        }
    }

    pub fn estimate(&self, kind: EffectKind) -> Result<EffectEstimate, EffectError> {
        let unsupported = || EffectError::UnsupportedKind { kind, design: self.design_label() };
        match (self, kind) {
            (StudyData::Continuous { treatment, control }, EffectKind::MeanDifference) => {
                mean_difference(treatment, control)
            }
            (StudyData::Continuous { treatment, control }, EffectKind::HedgesG) => {
                standardized_mean_difference(treatment, control)
            }
            (StudyData::Dichotomous { treatment, control }, EffectKind::RiskDifference) => {
                risk_difference(treatment, control)
            }
            (StudyData::Dichotomous { treatment, control }, EffectKind::LogOddsRatio) => {
                log_odds_ratio(treatment, control)
            }
            (StudyData::PrePost { pre_mean, post_mean, sd_pre, n, r }, EffectKind::HedgesG) => {
                standardized_mean_change(*pre_mean, *post_mean, *sd_pre, *n, *r)
            }
            _ => Err(unsupported()),
        }
    }
}

/// Re-express a standardized or raw mean difference in the outcome's own units.
///
/// Returns `None` for risk differences and log odds ratios, which are already
/// on an interpretable scale.
pub fn to_original_units(estimate: &EffectEstimate, data: &StudyData) -> Option<OriginalUnits> {
    let units = estimate.original_units.clone().unwrap_or_else(|| DEFAULT_UNITS.to_string());
    let (y, v) = match (estimate.kind, data) {
        (EffectKind::MeanDifference, _) => (estimate.y, estimate.v),
        (EffectKind::HedgesG, StudyData::Continuous { treatment, control }) => {
            let md = mean_difference(treatment, control).ok()?;
            (md.y, md.v)
        }
        (EffectKind::HedgesG, StudyData::PrePost { pre_mean, post_mean, sd_pre, n, r }) => {
            // var of the mean change with equal pre/post sds: 2 sd^2 (1 - r) / n
            let r = r.unwrap_or(IMPUTED_PREPOST_R);
            (post_mean - pre_mean, 2.0 * sd_pre * sd_pre * (1.0 - r) / *n as f64)
        }
        _ => return None,
    };
    Some(OriginalUnits { kind: EffectKind::MeanDifference, y, v, units })
}
