use std::sync::Arc;

use nalgebra::DMatrix;

use super::CoefficientModel;
use crate::error::{Error, Result};

/// `b(t, y) = offset + K y`, `sigma(t, y) = S` (constant).
///
/// Covers the Ornstein-Uhlenbeck fixtures, Brownian motion, pure transport
/// and the diagonal / coupled Galerkin fixtures.
#[derive(Debug, Clone)]
pub struct LinearSde {
    name: String,
    drift: DMatrix<f64>,
    offset: Vec<f64>,
    sigma: Vec<f64>,
    noise_dim: usize,
    horizon: f64,
}

impl LinearSde {
    pub fn new(
        name: impl Into<String>,
        drift: DMatrix<f64>,
        offset: Vec<f64>,
        sigma: DMatrix<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let n = drift.nrows();
        if n == 0 || drift.ncols() != n || offset.len() != n || sigma.nrows() != n || sigma.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "drift {}x{}, offset {}, sigma {}x{}",
                drift.nrows(),
                drift.ncols(),
                offset.len(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon {horizon}")));
        }
        if drift.iter().chain(&offset).chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite linear coefficients".into()));
        }
        let noise_dim = sigma.ncols();
        let mut row_major = Vec::with_capacity(n * noise_dim);
        for i in 0..n {
            row_major.extend(sigma.row(i).iter());
        }
        Ok(LinearSde {
            name: name.into(),
            drift,
            offset,
            sigma: row_major,
            noise_dim,
            horizon,
        })
    }

    /// `dY = (-rate * Y + offset) dt + sigma dW` in each of `n` coordinates.
    pub fn ou(n: usize, rate: f64, sigma: f64, horizon: f64) -> Result<Self> {
        Self::ou_with_offset(n, rate, 0.0, sigma, horizon)
    }

    pub fn ou_with_offset(n: usize, rate: f64, offset: f64, sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(
            format!("ou(rate={rate},offset={offset},sigma={sigma})"),
            DMatrix::identity(n, n) * -rate,
            vec![offset; n],
            DMatrix::identity(n, n) * sigma,
            horizon,
        )
    }

    /// `b_i = -rates[i] y_i`, `sigma = diag(sigmas)`.
    pub fn diagonal(rates: &[f64], sigmas: &[f64], horizon: f64) -> Result<Self> {
        if rates.len() != sigmas.len() {
            return Err(Error::Dimension("rates and sigmas differ in length".into()));
        }
        let n = rates.len();
        Self::new(
            "diagonal",
            DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, rates.iter().map(|r| -r))),
            vec![0.0; n],
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(sigmas)),
            horizon,
        )
    }

    pub fn zero(n: usize, horizon: f64) -> Self {
        Self::new("zero", DMatrix::zeros(n, n), vec![0.0; n], DMatrix::zeros(n, n), horizon)
            .expect("zero model is well formed")
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn drift_matrix(&self) -> &DMatrix<f64> {
        &self.drift
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }
}

impl CoefficientModel for LinearSde {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn drift_into(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        let n = self.offset.len();
        for i in 0..n {
            let mut acc = self.offset[i];
            for j in 0..n {
                acc += self.drift[(i, j)] * y[j];
            }
            out[i] = acc;
        }
    }

    fn sigma_into(&self, _t: f64, _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.sigma);
    }

    fn state_independent_diffusion(&self) -> bool {
        true
    }
}

type FieldFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Coefficients given by closures; `sigma` writes a row-major `n x m` buffer.
#[derive(Clone)]
pub struct ClosureModel {
    name: String,
    dim: usize,
    noise_dim: usize,
    horizon: f64,
    drift: Arc<FieldFn>,
    sigma: Arc<FieldFn>,
    additive: bool,
}

impl ClosureModel {
    pub fn new<B, S>(name: impl Into<String>, dim: usize, noise_dim: usize, horizon: f64, drift: B, sigma: S) -> Self
    where
        B: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        ClosureModel {
            name: name.into(),
            dim,
            noise_dim,
            horizon,
            drift: Arc::new(drift),
            sigma: Arc::new(sigma),
            additive: false,
        }
    }

    /// Declare that `sigma` ignores the state.
    pub fn additive(mut self) -> Self {
        self.additive = true;
        self
    }
}

impl CoefficientModel for ClosureModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn drift_into(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.drift)(t, y, out)
    }

    fn sigma_into(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.sigma)(t, y, out)
    }

    fn state_independent_diffusion(&self) -> bool {
        self.additive
    }
}
