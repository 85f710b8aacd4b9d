//! Kneedle knee detection on a non-increasing curve.
//!
//! Points are mapped to the unit square (`x = i / (n-1)`, `y` min-max
//! scaled) and compared against the descending diagonal `1 - x`. The
//! interior maximum of the difference curve is tried first (a concave
//! shoulder: the last point before a drop). It qualifies when some later
//! point falls below `max - S / (n-1)`. Otherwise the interior minimum is
//! tried (a convex elbow: the first point of a flat tail), qualifying when
//! some later point rises above `min + S / (n-1)`.

use crate::error::{Error, Result};

pub const DEFAULT_SENSITIVITY: f64 = 1.0;

/// Knee index with the default sensitivity `S = 1`.
pub fn detect_knee(curve: &[f64]) -> Result<Option<usize>> {
    detect_knee_with_sensitivity(curve, DEFAULT_SENSITIVITY)
}

/// Knee index of a non-increasing `curve`, or `None` when the curve has
/// fewer than 3 points, is constant, or has no qualifying knee.
pub fn detect_knee_with_sensitivity(curve: &[f64], sensitivity: f64) -> Result<Option<usize>> {
    if let Some(i) = curve.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("curve value at index {i}")));
    }
    if let Some(i) = curve.windows(2).position(|w| w[1] > w[0]) {
        return Err(Error::UnsortedCurve(i + 1));
    }
    let n = curve.len();
    if n < 3 {
        return Ok(None);
    }
    let (hi, lo) = (curve[0], curve[n - 1]);
    if hi == lo {
        return Ok(None);
    }
    let step = 1.0 / (n - 1) as f64;
    let diff: Vec<f64> = curve
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - lo) / (hi - lo) - (1.0 - i as f64 * step))
        .collect();

    let shoulder = first_extremum(&diff, |a, b| a > b);
    let threshold = diff[shoulder] - sensitivity * step;
    if diff[shoulder + 1..].iter().any(|&d| d < threshold) {
        return Ok(Some(shoulder));
    }

    let elbow = first_extremum(&diff, |a, b| a < b);
    let threshold = diff[elbow] + sensitivity * step;
    if diff[elbow + 1..].iter().any(|&d| d > threshold) {
        return Ok(Some(elbow));
    }
    Ok(None)
}

/// First interior index (endpoints excluded) holding the extremum.
fn first_extremum(values: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 1;
    for (i, &v) in values.iter().enumerate().take(values.len() - 1).skip(2) {
        if better(v, values[best]) {
            best = i;
        }
    }
    best
}
