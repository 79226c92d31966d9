use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;

/// Compares the tape gradient of a scalar function against central finite
/// differences. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` over all elements of
/// `x`, or infinity if `f` fails or produces a non-finite value.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let Ok(y) = f(&tape, leaf) else {
            return f64::INFINITY;
        };
        if y.backward().is_err() {
            return f64::INFINITY;
        }
        leaf.grad().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()))
    };
    let eval = |t: Tensor| -> Option<f64> {
        let tape = Tape::new();
        let v = tape.constant(t);
        f(&tape, v).ok().map(|y| y.item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let (Some(fp), Some(fm)) = (eval(plus), eval(minus)) else {
            return f64::INFINITY;
        };
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.data()[i];
        if !numeric.is_finite() || !a.is_finite() {
            return f64::INFINITY;
        }
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    worst
}
