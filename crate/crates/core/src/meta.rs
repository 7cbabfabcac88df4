//! Random-effects pooling (DerSimonian–Laird) and sensitivity analysis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effect::EffectKind;
use crate::normal::Z_975;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEstimate {
    pub result_id: String,
    pub kind: EffectKind,
    pub y: f64,
    pub v: f64,
}

impl StudyEstimate {
    pub fn new(result_id: impl Into<String>, kind: EffectKind, y: f64, v: f64) -> Self {
        Self { result_id: result_id.into(), kind, y, v }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub kind: EffectKind,
    pub mu: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub tau2: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoolError {
    #[error("no studies to pool")]
    EmptyGroup,
    #[error("result {result_id} has non-positive or non-finite variance {v}")]
    InvalidVariance { result_id: String, v: f64 },
    #[error("result {result_id} has a non-finite effect")]
    InvalidEffect { result_id: String },
    #[error("cannot pool different effect kinds together ({0} and {1})")]
    IncompatibleKinds(EffectKind, EffectKind),
    #[error("leave-one-out needs at least 2 studies, got {0}")]
    TooFewForLeaveOneOut(usize),
    #[error("inclusion mask has {mask} entries for {studies} studies")]
    MaskLength { mask: usize, studies: usize },
}

fn check(estimates: &[StudyEstimate]) -> Result<EffectKind, PoolError> {
    let first = estimates.first().ok_or(PoolError::EmptyGroup)?;
    for e in estimates {
        if e.kind != first.kind {
            return Err(PoolError::IncompatibleKinds(first.kind, e.kind));
        }
        if !e.y.is_finite() {
            return Err(PoolError::InvalidEffect { result_id: e.result_id.clone() });
        }
        if !(e.v.is_finite() && e.v > 0.0) {
            return Err(PoolError::InvalidVariance { result_id: e.result_id.clone(), v: e.v });
        }
    }
    Ok(first.kind)
}

pub fn pool_random_effects(estimates: &[StudyEstimate]) -> Result<PooledResult, PoolError> {
    let kind = check(estimates)?;
    let k = estimates.len();

    let (sum_w, sum_w2, sum_wy) = estimates.iter().fold((0.0, 0.0, 0.0), |(sw, sw2, swy), e| {
        let w = 1.0 / e.v;
        (sw + w, sw2 + w * w, swy + w * e.y)
    });
    let y_fixed = sum_wy / sum_w;
    let q: f64 = estimates.iter().map(|e| (e.y - y_fixed).powi(2) / e.v).sum();
    let df = (k - 1) as f64;
    let c = sum_w - sum_w2 / sum_w;
    let tau2 = if k > 1 && c > 0.0 { ((q - df) / c).max(0.0) } else { 0.0 };

    let (sum_ws, sum_wsy) = estimates.iter().fold((0.0, 0.0), |(sw, swy), e| {
        let w = 1.0 / (e.v + tau2);
        (sw + w, swy + w * e.y)
    });
    let (lo, hi) = estimates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.y), hi.max(e.y)));
    // a convex combination; clamp away the last-bit rounding
    let mu = (sum_wsy / sum_ws).clamp(lo, hi);
    let se = (1.0 / sum_ws).sqrt();
    let i2 = if k <= 1 || q <= 0.0 { 0.0 } else { ((q - df) / q).clamp(0.0, 1.0) };

    Ok(PooledResult {
        kind,
        mu,
        se,
        ci95: (mu - Z_975 * se, mu + Z_975 * se),
        tau2,
        q,
        i2,
        k,
    })
}

/// Pool every subset that drops exactly one study.
pub fn leave_one_out(estimates: &[StudyEstimate]) -> Result<Vec<(String, PooledResult)>, PoolError> {
    if estimates.len() < 2 {
        return Err(PoolError::TooFewForLeaveOneOut(estimates.len()));
    }
    (0..estimates.len())
        .map(|skip| {
            let rest: Vec<StudyEstimate> = estimates
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, e)| e.clone())
                .collect();
            pool_random_effects(&rest).map(|p| (estimates[skip].result_id.clone(), p))
        })
        .collect()
}

pub fn pool_with_inclusion(estimates: &[StudyEstimate], include: &[bool]) -> Result<PooledResult, PoolError> {
    if include.len() != estimates.len() {
        return Err(PoolError::MaskLength { mask: include.len(), studies: estimates.len() });
    }
    let subset: Vec<StudyEstimate> = estimates
        .iter()
        .zip(include)
        .filter(|(_, &keep)| keep)
        .map(|(e, _)| e.clone())
        .collect();
    pool_random_effects(&subset)
}
