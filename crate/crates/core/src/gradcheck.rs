//! Central finite-difference verification of analytic gradients.
//!
//! Training correctness rests on the gradient engine, so every backward rule
//! is checked against a two-sided difference quotient computed from nothing
//! but forward evaluations. The comparison is exposed as a library function
//! because the CLI ships a `grad-check` command that runs the same suite.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Step used for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Maximum tolerated relative error between analytic and numeric gradients.
pub const REL_TOLERANCE: f64 = 1e-4;

/// Relative error with a small absolute floor so near-zero gradient pairs do
/// not blow up the ratio.
fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Compares analytic gradients against central finite differences.
///
/// `value_fn` must be a deterministic function of the parameter tensors: any
/// random draw inside the computation has to be sampled once and captured by
/// the closure. Returns the maximum relative error over every coordinate of
/// every parameter.
pub fn max_relative_error<F>(
    mut value_fn: F,
    params: &[Tensor],
    analytic: &[Tensor],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "gradient check: {} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    if !(step > 0.0) {
        return Err(Error::invalid(format!("gradient check: step {step}")));
    }
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[pi].shape() {
            return Err(Error::invalid(format!(
                "gradient check: parameter {pi} has shape {:?} but gradient has {:?}",
                params[pi].shape(),
                grad.shape()
            )));
        }
        for ci in 0..params[pi].len() {
            let original = params[pi].data()[ci];
            work[pi].data_mut()[ci] = original + step;
            let plus = value_fn(&work)?;
            work[pi].data_mut()[ci] = original - step;
            let minus = value_fn(&work)?;
            work[pi].data_mut()[ci] = original;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grad.data()[ci], numeric));
        }
    }
    Ok(worst)
}
