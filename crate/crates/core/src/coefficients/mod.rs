//! Drift and diffusion coefficients on `H_n`, their projected components
//! `a^{ij}`, `b^i`, and sampling-based checkers for the standing assumptions.

mod checks;
mod lyapunov;
mod models;

pub use checks::{
    check_coercivity, check_demicontinuity, check_equicontinuity, check_growth, check_local_growth, check_lyapunov,
    check_matrix_field_psd, check_n_class, check_symmetry_psd, CheckReport, NClassReport, SamplePlan, Verdict,
    WorstCase, VIOLATION_TOL,
};
pub use lyapunov::{moment_constants, w_k, AssumptionParams, ComponentEnvelope, Kappa, LyapunovData, ScalarField};
pub use models::{ClosureModel, LinearSde};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Coefficients `b(t, y)` and `sigma(t, y)` at a fixed truncation `H_n`.
///
/// The `*_into` methods are unchecked and used in hot loops; the provided
/// `drift` / `sigma` methods validate time range, dimensions and finiteness.
pub trait CoefficientModel: Send + Sync {
    fn name(&self) -> &str;

    /// Truncation dimension `n`.
    fn dim(&self) -> usize;

    /// Number of retained noise directions `m`.
    fn noise_dim(&self) -> usize;

    /// Horizon `T`; the model is defined on `[0, T]`.
    fn horizon(&self) -> f64;

    fn drift_into(&self, t: f64, y: &[f64], out: &mut [f64]);

    /// Row-major `n x m` matrix whose columns are the images of the first
    /// `m` noise basis vectors.
    fn sigma_into(&self, t: f64, y: &[f64], out: &mut [f64]);

    /// True if `sigma` does not depend on the state (additive noise).
    fn state_independent_diffusion(&self) -> bool {
        false
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let upper = self.horizon();
        if !(t >= 0.0 && t <= upper * (1.0 + 1e-12)) {
            return Err(Error::TimeOutOfRange { t, lower: 0.0, upper });
        }
        Ok(())
    }

    fn drift(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.check_time(t)?;
        check_state(self.dim(), y)?;
        let mut out = vec![0.0; self.dim()];
        self.drift_into(t, y, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("{}: non-finite drift at t = {t}", self.name())));
        }
        Ok(out)
    }

    fn sigma(&self, t: f64, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        check_state(self.dim(), y)?;
        let (n, m) = (self.dim(), self.noise_dim());
        let mut out = vec![0.0; n * m];
        self.sigma_into(t, y, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("{}: non-finite sigma at t = {t}", self.name())));
        }
        Ok(DMatrix::from_row_slice(n, m, &out))
    }
}

fn check_state(n: usize, y: &[f64]) -> Result<()> {
    if y.len() != n {
        return Err(Error::Dimension(format!("state of length {} for a model on H_{n}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite state".into()));
    }
    Ok(())
}

/// `A_n(t, y) = 1/2 S S^T` with `S = sigma(t, y)`; exactly symmetric.
pub fn diffusion_matrix(model: &dyn CoefficientModel, t: f64, y: &[f64]) -> Result<DMatrix<f64>> {
    let s = model.sigma(t, y)?;
    let n = s.nrows();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = 0.5 * s.row(i).dot(&s.row(j));
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(a)
}

/// Row-major `A = 1/2 S S^T` from a row-major `n x m` sigma buffer.
pub(crate) fn half_outer(sigma: &[f64], n: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..m {
                acc += sigma[i * m + k] * sigma[j * m + k];
            }
            out[i * n + j] = 0.5 * acc;
            out[j * n + i] = 0.5 * acc;
        }
    }
}

/// Squared Hilbert-Schmidt norm of a row-major sigma buffer.
pub(crate) fn hs_norm_sq(sigma: &[f64]) -> f64 {
    sigma.iter().map(|v| v * v).sum()
}
