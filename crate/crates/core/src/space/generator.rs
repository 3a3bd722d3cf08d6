use nalgebra::DMatrix;

use super::testfn::FinitelyBasedFunction;
use crate::coefficients::CoefficientModel;
use crate::error::{Error, Result};

/// Kolmogorov operator on a finitely based function:
/// `Lf(y) = sum_{i,j<=d} a^{ij} d_i d_j f(y) + sum_{i<=d} b^i d_i f(y)`
/// with `A_n`, `b_n` already evaluated at `(t, y)`.
pub fn apply_l(f: &FinitelyBasedFunction, y: &[f64], a: &DMatrix<f64>, b: &[f64]) -> Result<f64> {
    let n = y.len();
    if f.base_dim() > n {
        return Err(Error::Dimension(format!("test function of base dimension {} on H_{n}", f.base_dim())));
    }
    if a.nrows() != n || a.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "A is {}x{}, b has length {}, state has length {n}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let asym = (a - a.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + a.abs().max()) {
        return Err(Error::InvalidParameter(format!("diffusion matrix not symmetric (|A - A^T| = {asym:e})")));
    }
    let d = f.base_dim();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    f.derivatives(y, &mut grad, &mut hess);
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += a[(i, j)] * hess[i * d + j];
        }
        acc += b[i] * grad[i];
    }
    Ok(acc)
}

/// `Lf(t, y)` with the coefficients taken from `model`.
pub fn generator(model: &dyn CoefficientModel, f: &FinitelyBasedFunction, t: f64, y: &[f64]) -> Result<f64> {
    let b = model.drift(t, y)?;
    let a = crate::coefficients::diffusion_matrix(model, t, y)?;
    apply_l(f, y, &a, &b)
}

/// Hot-loop variant: `a` is row-major `n x n`, scratch buffers of length
/// `d` and `d*d` are supplied by the caller.
pub(crate) fn apply_l_raw(
    f: &FinitelyBasedFunction,
    y: &[f64],
    a: &[f64],
    b: &[f64],
    grad: &mut [f64],
    hess: &mut [f64],
) -> f64 {
    let n = y.len();
    let d = f.base_dim();
    f.derivatives(y, grad, hess);
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += a[i * n + j] * hess[i * d + j];
        }
        acc += b[i] * grad[i];
    }
    acc
}
