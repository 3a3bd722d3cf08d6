//! Closed-form laws and quadrature used as independent oracles.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fpke::GridDensity;

/// Law of the scalar OU process `dY = (offset - rate Y) dt + sigma dW`,
/// `Y_0 = x0`, which is Gaussian at every `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuLaw {
    pub rate: f64,
    pub offset: f64,
    pub sigma: f64,
    pub x0: f64,
}

impl OuLaw {
    pub fn new(rate: f64, sigma: f64, x0: f64) -> Self {
        OuLaw {
            rate,
            offset: 0.0,
            sigma,
            x0,
        }
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn mean(&self, t: f64) -> f64 {
        if self.rate == 0.0 {
            return self.x0 + self.offset * t;
        }
        let eq = self.offset / self.rate;
        eq + (self.x0 - eq) * (-self.rate * t).exp()
    }

    pub fn variance(&self, t: f64) -> f64 {
        if self.rate == 0.0 {
            return self.sigma * self.sigma * t;
        }
        self.sigma * self.sigma * (-(-2.0 * self.rate * t).exp_m1()) / (2.0 * self.rate)
    }

    pub fn density(&self, t: f64, x: f64) -> f64 {
        let (m, v) = (self.mean(t), self.variance(t));
        (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    pub fn cdf(&self, t: f64, x: f64) -> f64 {
        normal_cdf(self.mean(t), self.variance(t).sqrt(), x)
    }

    /// `E g(Y_t)` by Gauss-Hermite quadrature with `nodes` points.
    pub fn expect<G: Fn(f64) -> f64>(&self, t: f64, nodes: usize, g: G) -> f64 {
        gaussian_expectation(self.mean(t), self.variance(t), nodes, g)
    }
}

pub fn normal_cdf(mean: f64, sd: f64, x: f64) -> f64 {
    if sd == 0.0 {
        return if x >= mean { 1.0 } else { 0.0 };
    }
    Normal::new(mean, sd).expect("finite positive standard deviation").cdf(x)
}

/// Nodes and weights of the `n`-point Gauss-Hermite rule for
/// `int g(x) e^{-x^2} dx` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 1..n {
        let off = (i as f64 / 2.0).sqrt();
        jacobi[(i, i - 1)] = off;
        jacobi[(i - 1, i)] = off;
    }
    let eig = jacobi.symmetric_eigen();
    let mu0 = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E g(X)` for `X ~ N(mean, var)`.
pub fn gaussian_expectation<G: Fn(f64) -> f64>(mean: f64, var: f64, nodes: usize, g: G) -> f64 {
    let (x, w) = gauss_hermite(nodes);
    let scale = (2.0 * var).sqrt();
    x.iter().zip(&w).map(|(xi, wi)| wi * g(mean + scale * xi)).sum::<f64>() / std::f64::consts::PI.sqrt()
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, x)| {
        let f = cdf(*x);
        d.max(f - i as f64 / m).max((i + 1) as f64 / m - f)
    })
}

/// `sup_x |F(x) - cdf(x)|` for a 1-D grid density, evaluated at the cell
/// faces where the piecewise-constant density's distribution function is
/// exact.
pub fn grid_ks_statistic<F: Fn(f64) -> f64>(density: &GridDensity, cdf: F) -> Result<f64> {
    if density.dim() != 1 {
        return Err(Error::Dimension(format!("KS distance of a grid density on H_{}", density.dim())));
    }
    let axis = density.axes()[0];
    let mut acc = 0.0;
    let mut d = cdf(axis.lo).abs();
    for (i, v) in density.values().iter().enumerate() {
        acc += v * axis.h;
        d = d.max((acc - cdf(axis.face(i))).abs());
    }
    Ok(d)
}

/// Asymptotic 95% critical value `1.358 / sqrt(M)`.
pub fn ks_critical_95(samples: usize) -> f64 {
    1.358 / (samples as f64).sqrt()
}
