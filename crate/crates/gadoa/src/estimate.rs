//! From class scores to DoA estimates and evaluation metrics.
//!
//! Per frame (or per classical power map), the winning class is refined by
//! parabolic interpolation over its circular neighbors; multi-frame estimates
//! aggregate through the circular median. Errors wrap on the circle, and the
//! two headline metrics are the mean absolute error and the share of trials
//! within one class width.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::parabolic_peak;

/// Number of DoA classes spanning the full azimuth circle.
pub const NUM_CLASSES: usize = 72;
/// Angular width of one class in degrees.
pub const CLASS_STEP_DEG: f64 = 360.0 / NUM_CLASSES as f64;
/// Default accuracy tolerance: one class width.
pub const DEFAULT_EPSILON_DEG: f64 = CLASS_STEP_DEG;

/// Interpolated azimuth from scores over the class grid.
///
/// The argmax (ties to the smallest index) is refined by a parabolic fit over
/// its circular neighbors, so class 0 and class C-1 are adjacent. The offset
/// is invariant to adding a constant to all scores and to positive rescaling.
pub fn frame_estimate(scores: &[f64]) -> Result<f64> {
    let c = scores.len();
    if c < 3 {
        return Err(Error::EmptyInput(format!("need at least 3 class scores, got {c}")));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite class score".into()));
    }
    let mut best = 0usize;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    let left = scores[(best + c - 1) % c];
    let right = scores[(best + 1) % c];
    let delta = parabolic_peak(left, scores[best], right)?;
    let step = 360.0 / c as f64;
    Ok(((best as f64 + delta) * step).rem_euclid(360.0))
}

/// Circular median: the sample minimizing the summed circular distance to
/// all others (ties resolve to the smallest angle). Inputs are normalized to
/// [0, 360).
pub fn aggregate(per_frame: &[f64]) -> Result<f64> {
    if per_frame.is_empty() {
        return Err(Error::EmptyInput("no frame estimates to aggregate".into()));
    }
    let normalized: Vec<f64> = per_frame.iter().map(|a| a.rem_euclid(360.0)).collect();
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &candidate in &normalized {
        let cost: f64 = normalized.iter().map(|&a| circular_error(candidate, a)).sum();
        if cost < best.0 - 1e-12 || (cost < best.0 + 1e-12 && candidate < best.1) {
            best = (cost, candidate);
        }
    }
    Ok(best.1)
}

/// Absolute angular difference with circular wrapping, in [0, 180].
pub fn circular_error(a_deg: f64, b_deg: f64) -> f64 {
    // |a - b| first keeps the result exactly symmetric in its arguments.
    let d = (a_deg - b_deg).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Per-frame estimates plus the aggregated global azimuth.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaEstimate {
    pub per_frame: Vec<f64>,
    pub global: f64,
}

impl DoaEstimate {
    pub fn from_frames(per_frame: Vec<f64>) -> Result<Self> {
        let global = aggregate(&per_frame)?;
        Ok(DoaEstimate { per_frame, global })
    }
}

/// Summary of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Per-trial circular errors, degrees.
    pub deltas: Vec<f64>,
    pub mae: f64,
    /// Percent of trials with delta <= epsilon (inclusive).
    pub accuracy: f64,
    pub n_trials: usize,
    pub epsilon: f64,
}

/// Mean absolute circular error and within-epsilon accuracy over
/// (estimate, truth) pairs. The tolerance boundary is inclusive.
pub fn evaluate(trials: &[(f64, f64)], epsilon: f64) -> Result<EvalResult> {
    if trials.is_empty() {
        return Err(Error::EmptyInput("no trials to evaluate".into()));
    }
    let deltas: Vec<f64> = trials
        .iter()
        .map(|&(est, truth)| circular_error(est, truth))
        .collect();
    let n = deltas.len();
    let mae = deltas.iter().sum::<f64>() / n as f64;
    let hits = deltas.iter().filter(|&&d| d <= epsilon).count();
    Ok(EvalResult {
        deltas,
        mae,
        accuracy: 100.0 * hits as f64 / n as f64,
        n_trials: n,
        epsilon,
    })
}

/// CSV serialization: one row per trial, then a summary record.
pub fn write_eval_csv<W: Write>(
    w: &mut W,
    trials: &[(f64, f64)],
    result: &EvalResult,
) -> Result<()> {
    writeln!(w, "# gadoa-eval v1")?;
    writeln!(w, "trial_id,theta_true_deg,theta_est_deg,delta_deg")?;
    for (i, ((est, truth), delta)) in trials.iter().zip(&result.deltas).enumerate() {
        writeln!(w, "{i},{truth},{est},{delta}")?;
    }
    writeln!(
        w,
        "summary,n={},mae_deg={},accuracy_pct={},epsilon_deg={}",
        result.n_trials, result.mae, result.accuracy, result.epsilon
    )?;
    Ok(())
}
