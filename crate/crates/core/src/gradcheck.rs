//! Central finite-difference verification of model gradients.
//!
//! The numeric gradient only calls [`model::loss`], never the analytic
//! gradient path, so it is an independent check of both built-in models.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{self, Batch, ModelSpec};
use crate::params::ParameterVector;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_REL_TOL: f64 = 1e-3;
pub const DEFAULT_ABS_TOL: f64 = 1e-6;

/// `(L(θ + h eᵢ) − L(θ − h eᵢ)) / 2h` for every coordinate i.
pub fn finite_difference(
    spec: &ModelSpec,
    params: &ParameterVector,
    batch: &Batch,
    step: f64,
) -> Result<ParameterVector> {
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.dim());
    for i in 0..params.dim() {
        let orig = params[i];
        probe.as_mut_slice()[i] = orig + step;
        let up = model::loss(spec, &probe, batch)?;
        probe.as_mut_slice()[i] = orig - step;
        let down = model::loss(spec, &probe, batch)?;
        probe.as_mut_slice()[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(ParameterVector::from_vec(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest per-coordinate error, see [`compare`].
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates whose error exceeds the relative tolerance.
    pub failures: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Per-coordinate error `|a − n| / max(|a|, |n|, abs_tol / rel_tol)`.
///
/// A coordinate passes when its error is at most `rel_tol`: a relative test
/// for coordinates of magnitude `≥ abs_tol / rel_tol`, and `|a − n| ≤ abs_tol`
/// below that.
pub fn compare(analytic: &ParameterVector, numeric: &ParameterVector, rel_tol: f64, abs_tol: f64) -> GradCheckReport {
    assert_eq!(analytic.dim(), numeric.dim());
    let floor = abs_tol / rel_tol;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        failures: 0,
        checked: analytic.dim(),
    };
    for (i, (&a, &n)) in analytic.as_slice().iter().zip(numeric.as_slice()).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err.is_nan() || err > rel_tol {
            report.failures += 1;
        }
        if report.worst_index.is_none() || err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}

/// Compares [`model::gradient`] with [`finite_difference`] at the default
/// step and tolerances.
pub fn check_gradient(spec: &ModelSpec, params: &ParameterVector, batch: &Batch) -> Result<GradCheckReport> {
    let analytic = model::gradient(spec, params, batch)?;
    let numeric = finite_difference(spec, params, batch, DEFAULT_STEP)?;
    Ok(compare(&analytic, &numeric, DEFAULT_REL_TOL, DEFAULT_ABS_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_flags_large_relative_errors() {
        let a = ParameterVector::from_vec(vec![1.0, 1e-8, 0.5]);
        let n = ParameterVector::from_vec(vec![1.0005, 0.0, 0.6]);
        let r = compare(&a, &n, 1e-3, 1e-6);
        assert_eq!(r.failures, 1);
        assert_eq!(r.worst_index, Some(2));
        assert!(!r.passed());
    }
}
