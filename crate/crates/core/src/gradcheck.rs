//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use crate::error::Result;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison. `max_rel_err` is the largest
/// coordinate-wise relative error, with magnitudes below 1e-6 compared on
/// that absolute floor instead.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub pass: bool,
    pub max_rel_err: f64,
    pub worst_coordinate: usize,
    pub tolerance: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

const REL_ERR_FLOOR: f64 = 1e-6;

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(REL_ERR_FLOOR);
    (a - b).abs() / scale
}

/// Compare the tape gradient of a scalar-valued function against central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// `f` receives a fresh tape and the id of the input leaf and must return
/// the id of a scalar root. Mismatches are reported, not raised; only a
/// failure to evaluate `f` is an error.
pub fn finite_difference_gradcheck<F>(
    f: &F,
    point: &Tensor,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, ValueId) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone())?;
    let root = f(&mut tape, x)?;
    let grads = tape.backward(root, &[x])?;
    let analytic = grads[&x].data().to_vec();

    let eval = |data: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(point.shape().to_vec(), data.to_vec())?)?;
        let root = f(&mut tape, x)?;
        tape.value(root).item()
    };

    let mut numeric = Vec::with_capacity(point.numel());
    let base = point.data();
    for i in 0..point.numel() {
        let mut plus = base.to_vec();
        plus[i] += h;
        let mut minus = base.to_vec();
        minus[i] -= h;
        numeric.push((eval(&plus)? - eval(&minus)?) / (2.0 * h));
    }

    let mut max_rel_err = 0.0;
    let mut worst = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(*a, *n);
        if e > max_rel_err {
            max_rel_err = e;
            worst = i;
        }
    }
    Ok(GradCheckReport {
        pass: max_rel_err < tolerance,
        max_rel_err,
        worst_coordinate: worst,
        tolerance,
        analytic,
        numeric,
    })
}
