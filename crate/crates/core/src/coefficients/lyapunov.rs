use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type FieldEval = dyn Fn(&[f64], &mut [f64], &mut [f64]) -> f64 + Send + Sync;
type Scalar = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A `C^2` function on `H_n` (any `n`) with gradient and row-major Hessian.
#[derive(Clone)]
pub struct ScalarField {
    name: String,
    eval: Arc<FieldEval>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({})", self.name)
    }
}

impl ScalarField {
    /// `eval(y, grad, hess)` fills zeroed buffers of length `n` and `n*n`.
    pub fn new<F>(name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&[f64], &mut [f64], &mut [f64]) -> f64 + Send + Sync + 'static,
    {
        ScalarField {
            name: name.into(),
            eval: Arc::new(eval),
        }
    }

    /// `V(y) = 1 + ||y||_H^2`.
    pub fn one_plus_square() -> Self {
        ScalarField::new("1+|y|^2", |y, g, h| {
            let n = y.len();
            for i in 0..n {
                g[i] = 2.0 * y[i];
                h[i * n + i] = 2.0;
            }
            1.0 + y.iter().map(|v| v * v).sum::<f64>()
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        let n = y.len();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        (self.eval)(y, &mut g, &mut h)
    }

    pub fn derivatives(&self, y: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        grad.fill(0.0);
        hess.fill(0.0);
        (self.eval)(y, grad, hess)
    }
}

/// Lyapunov pair `(V, Theta)` with constants `C_0`, `M_0`:
/// `LV <= C_0 V - Theta` and `sum a^{ij} d_i V d_j V <= M_0 V^2`.
#[derive(Clone)]
pub struct LyapunovData {
    pub v: ScalarField,
    theta_name: String,
    theta: Arc<Scalar>,
    pub c0: f64,
    pub m0: f64,
}

impl fmt::Debug for LyapunovData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovData")
            .field("v", &self.v)
            .field("theta", &self.theta_name)
            .field("c0", &self.c0)
            .field("m0", &self.m0)
            .finish()
    }
}

impl LyapunovData {
    pub fn new<T>(v: ScalarField, theta_name: impl Into<String>, theta: T, c0: f64, m0: f64) -> Result<Self>
    where
        T: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if !(c0 >= 0.0 && m0 >= 0.0 && c0.is_finite() && m0.is_finite()) {
            return Err(Error::InvalidParameter(format!("C0 = {c0}, M0 = {m0} must be finite and nonnegative")));
        }
        Ok(LyapunovData {
            v,
            theta_name: theta_name.into(),
            theta: Arc::new(theta),
            c0,
            m0,
        })
    }

    pub fn theta(&self, y: &[f64]) -> f64 {
        (self.theta)(y)
    }

    pub fn theta_name(&self) -> &str {
        &self.theta_name
    }
}

/// `M_k = k (C_0 + (k - 1) M_0)` and `N_k = M_k e^{M_k} + 1`.
pub fn moment_constants(c0: f64, m0: f64, k: u32) -> (f64, f64) {
    let k = k as f64;
    let m_k = k * (c0 + (k - 1.0) * m0);
    (m_k, m_k * m_k.exp() + 1.0)
}

/// `W_k = max_{n <= len(x0)} V(Pi_n x0)^k` for Dirac initial data.
pub fn w_k(v: &ScalarField, x0: &[f64], k: u32) -> f64 {
    (1..=x0.len()).map(|n| v.value(&x0[..n]).powi(k as i32)).fold(f64::NEG_INFINITY, f64::max)
}

/// Bounded nonnegative `kappa_i` with `kappa_i(s) -> 0` as `s -> inf`.
#[derive(Clone)]
pub struct Kappa {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Kappa({})", self.name)
    }
}

impl PartialEq for Kappa {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl Default for Kappa {
    fn default() -> Self {
        Kappa::zero()
    }
}

impl Kappa {
    pub fn zero() -> Self {
        Kappa {
            name: "0".into(),
            f: Arc::new(|_| 0.0),
        }
    }

    /// `c / (1 + s)`.
    pub fn reciprocal(c: f64) -> Self {
        Kappa {
            name: format!("{c}/(1+s)"),
            f: Arc::new(move |s| c / (1.0 + s.max(0.0))),
        }
    }

    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(name: impl Into<String>, f: F) -> Self {
        Kappa {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }
}

/// Per-component envelope `C_i V^{k_i} (1 + kappa_i(Theta) Theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEnvelope {
    pub c: f64,
    pub k: f64,
    #[serde(skip)]
    pub kappa: Kappa,
}

/// Constants of the coercivity / growth hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub gamma: f64,
    pub gamma_prime: f64,
    #[serde(default)]
    pub envelopes: Vec<ComponentEnvelope>,
}

impl AssumptionParams {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64, gamma: f64, gamma_prime: f64) -> Result<Self> {
        let p = AssumptionParams {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
            gamma,
            gamma_prime,
            envelopes: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_envelopes(mut self, envelopes: Vec<ComponentEnvelope>) -> Self {
        self.envelopes = envelopes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.gamma, self.gamma_prime];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite assumption constant".into()));
        }
        if self.lambda1 < 0.0 {
            return Err(Error::InvalidParameter(format!("lambda1 = {} < 0", self.lambda1)));
        }
        if !(self.lambda2 > 0.0 && self.lambda3 > 0.0 && self.lambda4 > 0.0) {
            return Err(Error::InvalidParameter("lambda2, lambda3, lambda4 must be positive".into()));
        }
        if !(self.gamma > 1.0 && self.gamma_prime >= self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "need gamma' >= gamma > 1, got gamma = {}, gamma' = {}",
                self.gamma, self.gamma_prime
            )));
        }
        Ok(())
    }

    /// Envelope of component `i` (0-based); the last one is reused beyond
    /// the supplied list.
    pub fn envelope(&self, i: usize) -> Option<&ComponentEnvelope> {
        self.envelopes.get(i).or(self.envelopes.last())
    }
}
