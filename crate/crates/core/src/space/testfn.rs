use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type CustomEval = dyn Fn(&[f64], &mut [f64], &mut [f64]) -> f64 + Send + Sync;

/// The function `g` behind a finitely based function `f(y) = g(y^1, ..., y^d)`.
#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    /// `psi((y^coord - center) / scale)`, optionally multiplied by the
    /// envelope `prod_{i < coord} psi(y^i / envelope)` which makes the
    /// function compactly supported in all of its base coordinates.
    Bump {
        coord: usize,
        center: f64,
        scale: f64,
        envelope: Option<f64>,
    },
    /// `coeff * prod_i (y^i)^{powers[i]}`
    Monomial { coeff: f64, powers: Vec<u32> },
    Product(Vec<FinitelyBasedFunction>),
    Sum(Vec<(f64, FinitelyBasedFunction)>),
    /// Evaluator writing the gradient (length d) and row-major Hessian (d*d)
    /// into zeroed buffers and returning the value.
    Custom(Arc<CustomEval>),
}

/// The standard smooth bump `psi(u) = exp(1 - 1/(1-u^2))` on `|u| < 1`,
/// normalised so that `psi(0) = 1`. Returns `(psi, psi', psi'')`.
pub fn bump_profile(u: f64) -> (f64, f64, f64) {
    let w = 1.0 - u * u;
    if w <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let v = (1.0 - 1.0 / w).exp();
    if v == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let w2 = w * w;
    let d1 = -2.0 * u * v / w2;
    let d2 = v * (-2.0 / w2 - 8.0 * u * u / (w2 * w) + 4.0 * u * u / (w2 * w2));
    (v, d1, d2)
}

/// A test function depending on the first `base_dim` coordinates only.
#[derive(Clone)]
pub struct FinitelyBasedFunction {
    label: String,
    base_dim: usize,
    support_radius: f64,
    profile: Profile,
}

impl fmt::Debug for FinitelyBasedFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FinitelyBasedFunction")
            .field("label", &self.label)
            .field("base_dim", &self.base_dim)
            .field("support_radius", &self.support_radius)
            .finish()
    }
}

impl FinitelyBasedFunction {
    pub fn constant(c: f64) -> Self {
        FinitelyBasedFunction {
            label: format!("const({c})"),
            base_dim: 1,
            support_radius: f64::INFINITY,
            profile: Profile::Constant(c),
        }
    }

    /// Bump in coordinate `coord` (0-based) without envelope.
    pub fn bump(coord: usize, center: f64, scale: f64) -> Result<Self> {
        Self::make_bump(coord, center, scale, None)
    }

    /// Bump in coordinate `coord` with an envelope bump of radius `envelope`
    /// in every earlier coordinate.
    pub fn enveloped_bump(coord: usize, center: f64, scale: f64, envelope: f64) -> Result<Self> {
        if !(envelope > 0.0 && envelope.is_finite()) {
            return Err(Error::InvalidParameter(format!("envelope radius {envelope} must be positive")));
        }
        Self::make_bump(coord, center, scale, Some(envelope))
    }

    fn make_bump(coord: usize, center: f64, scale: f64, envelope: Option<f64>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && center.is_finite()) {
            return Err(Error::InvalidParameter(format!("bump scale {scale} / center {center}")));
        }
        let reach = center.abs() + scale;
        let support_radius = match envelope {
            _ if coord == 0 => reach,
            Some(e) => (coord as f64 * e * e + reach * reach).sqrt(),
            None => f64::INFINITY,
        };
        Ok(FinitelyBasedFunction {
            label: format!("bump[{}](c={center},s={scale})", coord + 1),
            base_dim: coord + 1,
            support_radius,
            profile: Profile::Bump {
                coord,
                center,
                scale,
                envelope,
            },
        })
    }

    pub fn monomial(coeff: f64, powers: Vec<u32>) -> Result<Self> {
        if powers.is_empty() {
            return Err(Error::InvalidParameter("monomial needs at least one exponent".into()));
        }
        let label = powers
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0)
            .map(|(i, p)| format!("y{}^{p}", i + 1))
            .collect::<Vec<_>>()
            .join("*");
        Ok(FinitelyBasedFunction {
            label: format!("{coeff}*{label}"),
            base_dim: powers.len(),
            support_radius: f64::INFINITY,
            profile: Profile::Monomial { coeff, powers },
        })
    }

    pub fn product(factors: Vec<FinitelyBasedFunction>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("empty product".into()));
        }
        let base_dim = factors.iter().map(|f| f.base_dim).max().unwrap_or(1);
        // only a factor reading every coordinate bounds the whole support
        let support_radius = factors
            .iter()
            .filter(|f| f.base_dim == base_dim)
            .map(|f| f.support_radius)
            .fold(f64::INFINITY, f64::min);
        let label = factors.iter().map(|f| f.label.as_str()).collect::<Vec<_>>().join("*");
        Ok(FinitelyBasedFunction {
            label,
            base_dim,
            support_radius,
            profile: Profile::Product(factors),
        })
    }

    pub fn linear_combination(terms: Vec<(f64, FinitelyBasedFunction)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter("empty linear combination".into()));
        }
        let base_dim = terms.iter().map(|(_, f)| f.base_dim).max().unwrap_or(1);
        let support_radius = terms.iter().map(|(_, f)| f.support_radius).fold(0.0, f64::max);
        let label = terms
            .iter()
            .map(|(c, f)| format!("{c}*{}", f.label))
            .collect::<Vec<_>>()
            .join("+");
        Ok(FinitelyBasedFunction {
            label,
            base_dim,
            support_radius,
            profile: Profile::Sum(terms),
        })
    }

    pub fn custom<F>(label: impl Into<String>, base_dim: usize, support_radius: f64, eval: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64], &mut [f64]) -> f64 + Send + Sync + 'static,
    {
        if base_dim == 0 {
            return Err(Error::InvalidParameter("base dimension must be positive".into()));
        }
        Ok(FinitelyBasedFunction {
            label: label.into(),
            base_dim,
            support_radius,
            profile: Profile::Custom(Arc::new(eval)),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    /// `f(y)`; only the first `base_dim` coordinates of `y` are read.
    ///
    /// Panics if `y` is shorter than `base_dim`.
    pub fn value(&self, y: &[f64]) -> f64 {
        let y = &y[..self.base_dim];
        match &self.profile {
            Profile::Constant(c) => *c,
            Profile::Bump {
                coord,
                center,
                scale,
                envelope,
            } => {
                let mut v = bump_profile((y[*coord] - center) / scale).0;
                if let Some(e) = envelope {
                    for yi in &y[..*coord] {
                        if v == 0.0 {
                            break;
                        }
                        v *= bump_profile(yi / e).0;
                    }
                }
                v
            }
            Profile::Monomial { coeff, powers } => {
                coeff * y.iter().zip(powers).map(|(yi, p)| yi.powi(*p as i32)).product::<f64>()
            }
            Profile::Product(fs) => fs.iter().map(|f| f.value(y)).product(),
            Profile::Sum(terms) => terms.iter().map(|(c, f)| c * f.value(y)).sum(),
            Profile::Custom(eval) => {
                let d = self.base_dim;
                let mut g = vec![0.0; d];
                let mut h = vec![0.0; d * d];
                eval(y, &mut g, &mut h)
            }
        }
    }

    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let d = self.base_dim;
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        self.derivatives(y, &mut g, &mut h);
        g
    }

    /// Row-major `d x d` Hessian.
    pub fn hessian(&self, y: &[f64]) -> Vec<f64> {
        let d = self.base_dim;
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        self.derivatives(y, &mut g, &mut h);
        h
    }

    /// Writes the gradient and row-major Hessian (in the first `base_dim`
    /// coordinates) and returns the value.
    pub fn derivatives(&self, y: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let d = self.base_dim;
        let y = &y[..d];
        let grad = &mut grad[..d];
        let hess = &mut hess[..d * d];
        grad.fill(0.0);
        hess.fill(0.0);
        match &self.profile {
            Profile::Constant(c) => *c,
            Profile::Bump {
                coord,
                center,
                scale,
                envelope,
            } => bump_derivatives(y, *coord, *center, *scale, *envelope, grad, hess),
            Profile::Monomial { coeff, powers } => monomial_derivatives(y, *coeff, powers, grad, hess),
            Profile::Product(fs) => {
                let mut value = 1.0;
                let mut gf = vec![0.0; d];
                let mut hf = vec![0.0; d * d];
                for f in fs {
                    let df = f.base_dim;
                    let mut gk = vec![0.0; df];
                    let mut hk = vec![0.0; df * df];
                    let vk = f.derivatives(y, &mut gk, &mut hk);
                    gf.fill(0.0);
                    hf.fill(0.0);
                    gf[..df].copy_from_slice(&gk);
                    for i in 0..df {
                        hf[i * d..i * d + df].copy_from_slice(&hk[i * df..(i + 1) * df]);
                    }
                    // (value * f)'' = value f'' + f value'' + value' f'^T + f' value'^T
                    for i in 0..d {
                        for j in 0..d {
                            hess[i * d + j] =
                                value * hf[i * d + j] + vk * hess[i * d + j] + grad[i] * gf[j] + gf[i] * grad[j];
                        }
                    }
                    for i in 0..d {
                        grad[i] = value * gf[i] + vk * grad[i];
                    }
                    value *= vk;
                }
                value
            }
            Profile::Sum(terms) => {
                let mut value = 0.0;
                for (c, f) in terms {
                    let df = f.base_dim;
                    let mut gk = vec![0.0; df];
                    let mut hk = vec![0.0; df * df];
                    value += c * f.derivatives(y, &mut gk, &mut hk);
                    for i in 0..df {
                        grad[i] += c * gk[i];
                        for j in 0..df {
                            hess[i * d + j] += c * hk[i * df + j];
                        }
                    }
                }
                value
            }
            Profile::Custom(eval) => eval(y, grad, hess),
        }
    }
}

fn bump_derivatives(
    y: &[f64],
    coord: usize,
    center: f64,
    scale: f64,
    envelope: Option<f64>,
    grad: &mut [f64],
    hess: &mut [f64],
) -> f64 {
    let d = y.len();
    let (v, d1, d2) = bump_profile((y[coord] - center) / scale);
    let main = (v, d1 / scale, d2 / (scale * scale));
    let Some(e) = envelope.filter(|_| coord > 0) else {
        grad[coord] = main.1;
        hess[coord * d + coord] = main.2;
        return main.0;
    };
    // factors[i] = (value, first, second derivative) of the factor in y^i
    let mut factors = Vec::with_capacity(coord + 1);
    for yi in &y[..coord] {
        let (a, b, c) = bump_profile(yi / e);
        factors.push((a, b / e, c / (e * e)));
    }
    factors.push(main);
    let k = factors.len();
    let others = |skip: &[usize]| -> f64 {
        (0..k).filter(|l| !skip.contains(l)).map(|l| factors[l].0).product()
    };
    for i in 0..k {
        grad[i] = factors[i].1 * others(&[i]);
        hess[i * d + i] = factors[i].2 * others(&[i]);
        for j in 0..k {
            if j != i {
                hess[i * d + j] = factors[i].1 * factors[j].1 * others(&[i, j]);
            }
        }
    }
    factors.iter().map(|f| f.0).product()
}

fn monomial_derivatives(y: &[f64], coeff: f64, powers: &[u32], grad: &mut [f64], hess: &mut [f64]) -> f64 {
    let d = y.len();
    let pw = |i: usize, drop: u32| -> f64 {
        let p = powers[i];
        if drop > p {
            return 0.0;
        }
        let falling: f64 = (0..drop).map(|k| (p - k) as f64).product();
        falling * y[i].powi((p - drop) as i32)
    };
    let term = |drops: &[(usize, u32)]| -> f64 {
        coeff
            * (0..d)
                .map(|i| {
                    let drop = drops.iter().filter(|(j, _)| *j == i).map(|(_, k)| k).sum();
                    pw(i, drop)
                })
                .product::<f64>()
    };
    for i in 0..d {
        grad[i] = term(&[(i, 1)]);
        for j in 0..d {
            hess[i * d + j] = if i == j { term(&[(i, 2)]) } else { term(&[(i, 1), (j, 1)]) };
        }
    }
    term(&[])
}
