//! Central finite differences, the independent oracle for backward().

use alloc::vec::Vec;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar-valued function:
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` per coordinate.
///
/// `f` must be deterministic. This path never touches the tape, so it
/// can cross-check [`crate::Tape::backward`].
pub fn finite_diff_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::Argument("finite-difference step must be positive".into()));
    }
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let original = probe.values()[i];
        probe.values_mut()[i] = original + h;
        let plus = f(&probe)?;
        probe.values_mut()[i] = original - h;
        let minus = f(&probe)?;
        probe.values_mut()[i] = original;
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(x.rows(), x.cols(), grad)
}
