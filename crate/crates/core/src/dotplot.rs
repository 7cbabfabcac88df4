//! Quantile dotplots: 20 hypothetical replications of a normal sampling
//! distribution, binned and stacked on a shared axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal;

pub const DOT_COUNT: usize = 20;
pub const BIN_COUNT: usize = 25;
/// Fraction of the data range added on each side of a shared axis.
pub const AXIS_PADDING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
}

impl Axis {
    pub fn new(min: f64, max: f64) -> Result<Self, DotplotError> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(DotplotError::DegenerateAxis { min, max });
        }
        Ok(Self { min, max })
    }

    /// Axis spanning every value, padded on both sides.
    pub fn covering<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<Self, DotplotError> {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(DotplotError::DegenerateAxis { min: lo, max: hi });
        }
        let pad = if hi > lo { (hi - lo) * AXIS_PADDING } else { 0.5 };
        Self::new(lo - pad, hi + pad)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.min <= x && x <= self.max
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dot {
    pub bin_center: f64,
    pub stack_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotplotData {
    pub quantiles: Vec<f64>,
    pub dots: Vec<Dot>,
    pub bin_width: f64,
    pub axis: Axis,
}

impl DotplotData {
    pub fn max_stack(&self) -> u32 {
        self.dots.iter().map(|d| d.stack_index + 1).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DotplotError {
    #[error("standard error must be positive and finite, got {0}")]
    NonPositiveSe(f64),
    #[error("mean must be finite")]
    NonFiniteMean,
    #[error("degenerate axis [{min}, {max}]")]
    DegenerateAxis { min: f64, max: f64 },
    #[error("quantile {value} lies outside the axis [{min}, {max}]")]
    OutsideAxis { value: f64, min: f64, max: f64 },
    #[error("quantiles must be in ascending order")]
    Unsorted,
}

/// The 20 quantiles `mean + se * z((i - 0.5) / 20)`, i = 1..=20.
///
/// Quantiles are built in mirrored pairs so `q[i] - mean == mean - q[19 - i]`
/// up to the rounding of the final addition.
pub fn sampling_quantiles(mean: f64, se: f64) -> Result<Vec<f64>, DotplotError> {
    if !(se.is_finite() && se > 0.0) {
        return Err(DotplotError::NonPositiveSe(se));
    }
    if !mean.is_finite() {
        return Err(DotplotError::NonFiniteMean);
    }
    let half = DOT_COUNT / 2;
    let z_lower: Vec<f64> = (1..=half)
        .map(|i| {
            let p = (i as f64 - 0.5) / DOT_COUNT as f64;
            normal::inverse_cdf(p).expect("p lies strictly inside (0, 1)")
        })
        .collect();
    let lower = z_lower.iter().map(|z| mean + se * z);
    let upper = z_lower.iter().rev().map(|z| mean + se * -z);
    Ok(lower.chain(upper).collect())
}

pub fn layout_dots(quantiles: &[f64], axis: Axis) -> Result<DotplotData, DotplotError> {
    let axis = Axis::new(axis.min, axis.max)?;
    if quantiles.windows(2).any(|w| w[1] < w[0]) {
        return Err(DotplotError::Unsorted);
    }
    let bin_width = axis.span() / BIN_COUNT as f64;
    let mut heights = [0u32; BIN_COUNT];
    let mut dots = Vec::with_capacity(quantiles.len());
    for &q in quantiles {
        if !axis.contains(q) {
            return Err(DotplotError::OutsideAxis { value: q, min: axis.min, max: axis.max });
        }
        // half-open bins, the last one closed on the right
        let bin = (((q - axis.min) / bin_width).floor() as usize).min(BIN_COUNT - 1);
        dots.push(Dot {
            bin_center: axis.min + (bin as f64 + 0.5) * bin_width,
            stack_index: heights[bin],
        });
        heights[bin] += 1;
    }
    Ok(DotplotData { quantiles: quantiles.to_vec(), dots, bin_width, axis })
}

/// Quantiles and layout for N(mean, se²) on the given axis.
pub fn dotplot(mean: f64, se: f64, axis: Axis) -> Result<DotplotData, DotplotError> {
    layout_dots(&sampling_quantiles(mean, se)?, axis)
}

/// Number of quantiles strictly above (or below) `x0`.
pub fn count_beyond(quantiles: &[f64], x0: f64, direction: Direction) -> usize {
    quantiles
        .iter()
        .filter(|&&q| match direction {
            Direction::Above => q > x0,
            Direction::Below => q < x0,
        })
        .count()
}
