//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::nn::{GradientTape, Scorer};

/// Gradients smaller than this are compared in absolute rather than relative
/// terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Worst [`relative_error`] over paired coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Compares the tape returned by `loss` against central differences over
/// every scorer parameter and returns the worst relative error.
pub fn finite_diff_check(
    scorer: &Scorer,
    loss: impl Fn(&Scorer) -> Result<(f64, GradientTape)>,
    eps: f64,
) -> Result<f64> {
    let (_, tape) = loss(scorer)?;
    let analytic = tape.flat();
    let mut probe = scorer.clone();
    let params = scorer.params();
    let mut numeric = Vec::with_capacity(params.len());
    for (i, &p) in params.iter().enumerate() {
        *probe.param_mut(i) = p + eps;
        let up = loss(&probe)?.0;
        *probe.param_mut(i) = p - eps;
        let down = loss(&probe)?.0;
        *probe.param_mut(i) = p;
        numeric.push((up - down) / (2.0 * eps));
    }
    Ok(max_relative_error(&analytic, &numeric))
}
