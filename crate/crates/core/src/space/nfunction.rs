use std::fmt;
use std::sync::Arc;

use super::SpaceTriple;

type Eval = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Coercivity gauge `N: H_n -> [0, inf)` with growth exponent `p` and
/// homogeneity order `rho`.
///
/// Compactness of the sublevel set `{N <= 1}` cannot be checked from point
/// evaluations; it is carried as declared metadata only.
#[derive(Clone)]
pub struct NFunction {
    name: String,
    p: f64,
    rho: f64,
    eval: Arc<Eval>,
}

impl fmt::Debug for NFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NFunction")
            .field("name", &self.name)
            .field("p", &self.p)
            .field("rho", &self.rho)
            .finish()
    }
}

impl NFunction {
    pub fn new<F>(name: impl Into<String>, p: f64, rho: f64, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        NFunction {
            name: name.into(),
            p,
            rho,
            eval: Arc::new(eval),
        }
    }

    /// `N(v) = scale * ||v||_X^2`, with `p = rho = 2`.
    pub fn weighted_square(triple: &SpaceTriple, scale: f64) -> Self {
        let w = triple.weights().to_vec();
        NFunction::new(format!("{scale}*|v|_X^2"), 2.0, 2.0, move |v: &[f64]| {
            scale * v.iter().zip(&w).map(|(x, l)| l * x * x).sum::<f64>()
        })
    }

    /// `N(v) = ||v||_H^p`, with `rho = p`.
    pub fn h_power(p: f64) -> Self {
        NFunction::new(format!("|v|_H^{p}"), p, p, move |v: &[f64]| h_norm_pow(v, p))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        (self.eval)(v)
    }
}

/// `||v||_H^p`, evaluated as `(sum v_i^2)^(p/2)`.
pub(crate) fn h_norm_pow(v: &[f64], p: f64) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().powf(p / 2.0)
}
