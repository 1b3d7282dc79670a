use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
const ABS_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares the tape gradient of `f` at `x` with central differences over every coordinate.
///
/// Returns the largest per-coordinate [`relative_error`].
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_at(f, x, h, &coords)
}

/// Same as [`finite_diff_check`] but only over the listed flat coordinates.
pub fn finite_diff_check_at<F>(f: F, x: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Parameter(format!(
            "finite-difference step {h} outside [1e-6, 1e-3]"
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&mut tape, xv)?;
    check_scalar(&tape, loss)?;
    tape.backward(loss)?;
    let analytic = tape.grad(xv).expect("backward populates input grad");

    let eval = |point: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(point);
        let out = f(&mut t, v)?;
        check_scalar(&t, out)?;
        Ok(t.value(out).item())
    };

    let mut worst: f64 = 0.0;
    for &j in coords {
        let mut plus = x.clone();
        plus.data_mut()[j] += h;
        let mut minus = x.clone();
        minus.data_mut()[j] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[j], numeric));
    }
    Ok(worst)
}

fn check_scalar(tape: &Tape, v: Var) -> Result<()> {
    let value = tape.value(v);
    if value.len() != 1 {
        return Err(Error::Usage(format!(
            "checked function must return a scalar, got {:?}",
            value.shape()
        )));
    }
    if !value.item().is_finite() {
        return Err(Error::Evaluation(
            "checked function returned a non-finite value".into(),
        ));
    }
    Ok(())
}
