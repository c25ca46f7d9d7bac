//! Empirical latency analyses: log-binned latency densities, positive-ratio
//! curves against latency, and least-squares power-law fits in log-log space.
//!
//! Examples with undefined latency are ignored throughout.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{EdgeKey, ExampleSet, Timestamp};
use crate::diag::Diagnostics;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("no examples with a defined latency match the request")]
    NoExamples,
    #[error("a power-law fit needs at least 2 usable points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid binning: {0}")]
    InvalidBinning(String),
    #[error("edge {0} is not in the example set")]
    UnknownEdge(EdgeKey),
}

/// Logarithmic bins with edges at `base^m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogBinning {
    pub base: f64,
    /// Bins with fewer examples are left out of ratio curves.
    pub min_count: usize,
}

impl Default for LogBinning {
    fn default() -> Self {
        Self {
            base: 10f64.powf(0.1),
            min_count: 10,
        }
    }
}

impl LogBinning {
    pub fn new(base: f64, min_count: usize) -> Result<Self, ScalingError> {
        let b = Self { base, min_count };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<(), ScalingError> {
        if !(self.base > 1.0 && self.base.is_finite()) {
            return Err(ScalingError::InvalidBinning(format!("base {} must exceed 1", self.base)));
        }
        if self.min_count == 0 {
            return Err(ScalingError::InvalidBinning("min_count must be at least 1".into()));
        }
        Ok(())
    }

    /// Index `m` of the bin `[base^m, base^(m+1))` containing `x > 0`.
    pub fn index(&self, x: f64) -> i64 {
        // the nudge keeps exact powers of the base in their own bin
        (x.ln() / self.base.ln() + 1e-9).floor() as i64
    }

    pub fn lower(&self, m: i64) -> f64 {
        self.base.powi(m as i32)
    }

    /// Geometric midpoint of bin `m`.
    pub fn center(&self, m: i64) -> f64 {
        self.base.powf(m as f64 + 0.5)
    }

    pub fn width(&self, m: i64) -> f64 {
        self.lower(m + 1) - self.lower(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFilter {
    PositivesOnly,
    All,
}

/// One bin of a histogram or ratio curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinPoint {
    pub center: f64,
    pub value: f64,
    pub n: usize,
}

/// Probability density of latency over log bins; it integrates to 1 over the
/// occupied bins.
pub fn latency_histogram(set: &ExampleSet, bins: LogBinning, labels: LabelFilter) -> Result<Vec<BinPoint>, ScalingError> {
    bins.validate()?;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for ex in set.iter().filter(|e| labels == LabelFilter::All || e.label) {
        if let Some(tau) = ex.latency {
            *counts.entry(bins.index(tau)).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(ScalingError::NoExamples);
    }
    Ok(counts
        .into_iter()
        .map(|(m, n)| BinPoint {
            center: bins.center(m),
            value: n as f64 / (total as f64 * bins.width(m)),
            n,
        })
        .collect())
}

/// Fraction of positive examples per latency bin, omitting bins with fewer
/// than `bins.min_count` examples.
pub fn propagation_ratio_curve(set: &ExampleSet, bins: LogBinning) -> Result<Vec<BinPoint>, ScalingError> {
    bins.validate()?;
    let mut counts: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for ex in set.iter() {
        if let Some(tau) = ex.latency {
            let c = counts.entry(bins.index(tau)).or_default();
            c.0 += usize::from(ex.label);
            c.1 += 1;
        }
    }
    if counts.is_empty() {
        return Err(ScalingError::NoExamples);
    }
    Ok(counts
        .into_iter()
        .filter(|(_, (_, n))| *n >= bins.min_count)
        .map(|(m, (pos, n))| BinPoint {
            center: bins.center(m),
            value: pos as f64 / n as f64,
            n,
        })
        .collect())
}

/// A straight line through `(ln x, ln y)`: `y ≈ exp(intercept) · x^slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl ScalingFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// Restricts which curve points enter a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FitRange {
    pub min_x: Option<f64>,
    pub max_x: Option<f64>,
}

impl FitRange {
    pub fn contains(&self, x: f64) -> bool {
        self.min_x.is_none_or(|lo| x >= lo) && self.max_x.is_none_or(|hi| x <= hi)
    }
}

/// Ordinary least squares on `(ln x, ln y)`. Points with `y <= 0` are dropped
/// with a `nonpositive_point` warning; points with `x <= 0` are rejected the
/// same way.
pub fn fit_power_law(points: &[(f64, f64)], diag: &mut Diagnostics) -> Result<ScalingFit, ScalingError> {
    let mut logs = Vec::with_capacity(points.len());
    for &(x, y) in points {
        if x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite() {
            logs.push((x.ln(), y.ln()));
        } else {
            diag.warn("scaling", "nonpositive_point", format!("dropped ({x}, {y}) from power-law fit"));
        }
    }
    least_squares(&logs)
}

/// Ordinary least squares on already-transformed points.
pub fn least_squares(points: &[(f64, f64)]) -> Result<ScalingFit, ScalingError> {
    let n = points.len();
    if n < 2 {
        return Err(ScalingError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ScalingError::TooFewPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
        n_points: n,
    })
}

/// Fits a curve of bin points, keeping those inside `range`.
pub fn fit_curve(curve: &[BinPoint], range: FitRange, diag: &mut Diagnostics) -> Result<ScalingFit, ScalingError> {
    let points: Vec<(f64, f64)> = curve
        .iter()
        .filter(|p| range.contains(p.center))
        .map(|p| (p.center, p.value))
        .collect();
    fit_power_law(&points, diag)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimelinePoint {
    pub exposure_time: Timestamp,
    pub label: bool,
    pub latency: Option<f64>,
}

/// All exposures on one edge in chronological order.
pub fn edge_timeline(set: &ExampleSet, edge: EdgeKey) -> Result<Vec<TimelinePoint>, ScalingError> {
    let examples = set.examples(&edge).ok_or(ScalingError::UnknownEdge(edge))?;
    Ok(examples
        .iter()
        .map(|e| TimelinePoint {
            exposure_time: e.exposure_time,
            label: e.label,
            latency: e.latency,
        })
        .collect())
}
