use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`]; below this magnitude the
/// comparison is effectively absolute.
const REL_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compares the tape gradient of a scalar function against central finite
/// differences at `point`.
pub fn grad_check<F>(mut f: F, point: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let x = tape.param(point.clone())?;
    let y = f(&mut tape, x)?;
    let analytic = tape.grad_values(y, &[x])?.remove(0).into_data();

    let mut eval = |p: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        // a parameter, so functions that differentiate internally see the same graph
        let x = t.param(p)?;
        let y = f(&mut t, x)?;
        let v = t.value(y).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("finite-difference evaluation".into()))
        }
    };

    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        tolerance,
    })
}
