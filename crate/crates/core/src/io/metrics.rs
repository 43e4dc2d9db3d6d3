//! Prediction error metrics.

use serde::{Deserialize, Serialize};

use super::tables::ResultsTable;
use crate::error::{Error, Result};

/// Below this mean magnitude the reference is treated as near zero.
const NEAR_ZERO: f64 = 1e-9;

/// Columns that describe the solver rather than the plant.
const SOLVER_COLUMNS: [&str; 4] = ["time", "iterations", "mass_residual", "energy_residual"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `mean |y|`
    Mean,
    /// `max y - min y`, used when the reference changes sign or is near zero.
    Range,
    /// No normalization: the reference is identically zero.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMetrics {
    pub max_abs_error: f64,
    /// Percent.
    pub mean_relative_error: f64,
    pub normalization: Normalization,
}

/// `100 mean|y - y_hat| / mean|y|`, with the range of `y` as the denominator
/// when `y` changes sign or has near-zero mean magnitude.
pub fn compute_metrics(reference: &[f64], predicted: &[f64]) -> Result<SignalMetrics> {
    if reference.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            what: "compared series",
            expected: reference.len(),
            got: predicted.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::InvalidParameter("cannot compare empty series".into()));
    }
    let n = reference.len() as f64;
    let mut max_abs: f64 = 0.0;
    let mut sum_err = 0.0;
    for (y, p) in reference.iter().zip(predicted) {
        let e = (y - p).abs();
        max_abs = max_abs.max(e);
        sum_err += e;
    }
    let mean_err = sum_err / n;
    let mean_ref = reference.iter().map(|y| y.abs()).sum::<f64>() / n;
    let lo = reference.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mixed_sign = lo < 0.0 && hi > 0.0;

    let (normalization, denom) = if mean_ref >= NEAR_ZERO && !mixed_sign {
        (Normalization::Mean, mean_ref)
    } else if hi - lo > 0.0 {
        (Normalization::Range, hi - lo)
    } else {
        (Normalization::Absolute, 0.01)
    };
    Ok(SignalMetrics {
        max_abs_error: max_abs,
        mean_relative_error: 100.0 * mean_err / denom,
        normalization,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// Largest absolute error over all compared signals.
    pub max_abs_error: f64,
    /// Mean of the per-signal relative errors (percent).
    pub mean_relative_error: f64,
    pub signals: Vec<(String, SignalMetrics)>,
}

/// Compares the columns both tables share (optionally only those starting
/// with `prefix`), skipping time and solver diagnostics. Time grids must agree.
pub fn compare_results(reference: &ResultsTable, predicted: &ResultsTable, prefix: Option<&str>) -> Result<ErrorMetrics> {
    let (tr, tp) = (reference.column("time"), predicted.column("time"));
    match (tr, tp) {
        (Some(a), Some(b)) if a.len() == b.len() => {
            if let Some(k) = a.iter().zip(&b).position(|(x, y)| (x - y).abs() > 1e-9 * x.abs().max(1.0)) {
                return Err(Error::Config(format!("time grids differ at row {}: {} vs {}", k + 1, a[k], b[k])));
            }
        }
        (Some(a), Some(b)) => {
            return Err(Error::DimensionMismatch {
                what: "rows in compared results",
                expected: a.len(),
                got: b.len(),
            });
        }
        _ => return Err(Error::Config("both results need a time column".into())),
    }
    let mut signals = Vec::new();
    for name in &reference.columns {
        if SOLVER_COLUMNS.contains(&name.as_str()) || prefix.is_some_and(|p| !name.starts_with(p)) {
            continue;
        }
        if let (Some(y), Some(p)) = (reference.column(name), predicted.column(name)) {
            signals.push((name.clone(), compute_metrics(&y, &p)?));
        }
    }
    if signals.is_empty() {
        return Err(Error::Config("no common signal columns to compare".into()));
    }
    let max_abs_error = signals.iter().map(|(_, m)| m.max_abs_error).fold(0.0, f64::max);
    let mean_relative_error = signals.iter().map(|(_, m)| m.mean_relative_error).sum::<f64>() / signals.len() as f64;
    Ok(ErrorMetrics {
        max_abs_error,
        mean_relative_error,
        signals,
    })
}
