//! Central finite-difference comparison against tape gradients.

use super::{NumError, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
}

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is numerically zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

/// Compare the analytic gradient of `f` with central differences of step
/// `step` for every input tensor. With `max_coords = Some(n)`, at most `n`
/// evenly spaced coordinates per input are perturbed.
pub fn check<T, F>(
    inputs: &[Tensor<T>],
    f: F,
    step: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport, NumError>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>, NumError>,
{
    let analytic: Vec<Tensor<T>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, T>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|v| grads.get(*v)).collect()
    };

    let eval = |perturbed: &[Tensor<T>]| -> Result<f64, NumError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, T>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars)?.value().item().map(Scalar::as_f64)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coords_checked: 0,
    };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = match max_coords {
            Some(limit) if limit < n => (0..limit).map(|i| i * n / limit + (n / limit) / 2).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = input.data()[c];
            work[ti].data_mut()[c] = orig + T::lit(step);
            let plus = eval(&work)?;
            work[ti].data_mut()[c] = orig - T::lit(step);
            let minus = eval(&work)?;
            work[ti].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic[ti].data()[c].as_f64();
            let abs = (numeric - exact).abs();
            let rel = abs / numeric.abs().max(exact.abs()).max(REL_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.coords_checked += 1;
        }
    }
    Ok(report)
}
