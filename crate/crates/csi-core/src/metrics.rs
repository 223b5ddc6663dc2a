//! Empirical error distributions and confidence-level queries.
//!
//! Quantiles use the ceil-rank order statistic (no interpolation), so every
//! reported value is one of the observed samples and matches a brute-force
//! sort-and-index oracle exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty sample set")]
    EmptySamples,
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("confidence {0} outside (0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("unit mismatch: {0:?} vs {1:?}")]
    UnitMismatch(ErrorUnit, ErrorUnit),
}

/// Unit annotation of an error distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorUnit {
    Degrees,
    Seconds,
}

/// Empirical CDF over a sorted copy of the input samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    samples: Vec<f64>,
    pub unit: ErrorUnit,
}

impl Cdf {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn sorted_samples(&self) -> &[f64] {
        &self.samples
    }

    /// F(x) = (# samples <= x) / n.
    pub fn f(&self, x: f64) -> f64 {
        let count = self.samples.partition_point(|&s| s <= x);
        count as f64 / self.samples.len() as f64
    }
}

/// Build an empirical CDF; the input order does not matter.
pub fn ecdf(samples: &[f64], unit: ErrorUnit) -> Result<Cdf, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(Cdf { samples: sorted, unit })
}

/// Error value at confidence `c`: the ceil(c·n)-th order statistic (1-based).
pub fn quantile(cdf: &Cdf, confidence: f64) -> Result<f64, MetricsError> {
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(MetricsError::ConfidenceOutOfRange(confidence));
    }
    let n = cdf.samples.len();
    let rank = (confidence * n as f64).ceil() as usize;
    Ok(cdf.samples[rank.clamp(1, n) - 1])
}

/// Per-level comparison of faulty and corrected error CDFs against a clean
/// baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRow {
    pub confidence: f64,
    pub clean: f64,
    pub faulty_minus_clean: f64,
    pub corrected_minus_clean: Option<f64>,
    /// True when |faulty - clean| is within the overlap tolerance.
    pub overlapping: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub unit: ErrorUnit,
    pub overlap_tolerance: f64,
    pub rows: Vec<DegradationRow>,
}

/// Quantile differences `faulty - clean` and `corrected - clean` at each
/// confidence level, with levels inside the overlap tolerance flagged.
pub fn degradation_report(
    clean: &Cdf,
    faulty: &Cdf,
    corrected: Option<&Cdf>,
    levels: &[f64],
    overlap_tolerance: f64,
) -> Result<DegradationReport, MetricsError> {
    if clean.unit != faulty.unit {
        return Err(MetricsError::UnitMismatch(clean.unit, faulty.unit));
    }
    if let Some(c) = corrected {
        if c.unit != clean.unit {
            return Err(MetricsError::UnitMismatch(clean.unit, c.unit));
        }
    }
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let qc = quantile(clean, level)?;
        let qf = quantile(faulty, level)?;
        let qr = corrected.map(|c| quantile(c, level)).transpose()?;
        let deg = qf - qc;
        rows.push(DegradationRow {
            confidence: level,
            clean: qc,
            faulty_minus_clean: deg,
            corrected_minus_clean: qr.map(|q| q - qc),
            overlapping: deg.abs() <= overlap_tolerance,
        });
    }
    Ok(DegradationReport { unit: clean.unit, overlap_tolerance, rows })
}

/// Default confidence levels: 0.1 .. 1.0 in steps of 0.1.
pub fn default_levels() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}
