//! Spectral Galerkin truncation of the 2-D stochastic Navier-Stokes system
//! on the torus `[0, 2 pi)^2` in a real divergence-free Fourier basis.
//!
//! Coordinate `y_j` multiplies `phi_j = sqrt(2) e_k cos(k.x)` or
//! `sqrt(2) e_k sin(k.x)` with `e_k = (-k_2, k_1) / |k|`, for `k` in the half
//! plane `k_1 > 0` or `k_1 = 0, k_2 > 0`, `|k|_inf <= k_max`. The basis is
//! orthonormal for the averaged inner product `(2 pi)^{-2} int u.v dx`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{AssumptionParams, CoefficientModel, LyapunovData, ScalarField, Verdict};
use crate::error::{Error, Result};
use crate::martingale::PathEnsemble;
use crate::space::{NFunction, SpaceTriple};

fn default_nu() -> f64 {
    0.1
}
fn default_k_max() -> usize {
    4
}
fn default_q0() -> f64 {
    0.05
}
fn default_decay() -> f64 {
    2.0
}
fn default_horizon() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnseConfig {
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// `q_k = q0 |k|^{-decay}` unless `q` lists one amplitude per coordinate.
    #[serde(default = "default_q0")]
    pub q0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "yes")]
    pub convection: bool,
    /// `false` switches off the whole drift, leaving pure additive noise.
    #[serde(default = "yes")]
    pub drift: bool,
}

impl Default for SnseConfig {
    fn default() -> Self {
        SnseConfig {
            nu: default_nu(),
            k_max: default_k_max(),
            q0: default_q0(),
            decay: default_decay(),
            q: None,
            horizon: default_horizon(),
            convection: true,
            drift: true,
        }
    }
}

impl SnseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("viscosity {} must be positive", self.nu)));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidParameter("k_max = 0 retains no modes".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon {}", self.horizon)));
        }
        if !(self.q0 >= 0.0 && self.q0.is_finite() && self.decay.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise q0 = {}, decay = {}", self.q0, self.decay)));
        }
        if let Some(q) = &self.q {
            if q.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter("noise amplitudes must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cos,
    Sin,
}

/// One real basis field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: [i32; 2],
    pub parity: Parity,
    /// `k^perp = (-k_2, k_1)`; the field points along `k^perp / |k|`.
    pub perp: [i32; 2],
    pub direction: [f64; 2],
}

impl Mode {
    pub fn k_sq(&self) -> f64 {
        (self.k[0] * self.k[0] + self.k[1] * self.k[1]) as f64
    }

    /// `phi(x)` in physical space.
    pub fn velocity(&self, x: [f64; 2]) -> [f64; 2] {
        let phase = self.k[0] as f64 * x[0] + self.k[1] as f64 * x[1];
        let amp = std::f64::consts::SQRT_2 * self.profile(phase);
        [amp * self.direction[0], amp * self.direction[1]]
    }

    /// `d phi / d x_p` in physical space, as `[p][component]`.
    pub fn gradient(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let phase = self.k[0] as f64 * x[0] + self.k[1] as f64 * x[1];
        let d = std::f64::consts::SQRT_2 * self.profile_derivative(phase);
        let mut g = [[0.0; 2]; 2];
        for (p, row) in g.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = d * self.k[p] as f64 * self.direction[c];
            }
        }
        g
    }

    fn profile(&self, phase: f64) -> f64 {
        match self.parity {
            Parity::Cos => phase.cos(),
            Parity::Sin => phase.sin(),
        }
    }

    fn profile_derivative(&self, phase: f64) -> f64 {
        match self.parity {
            Parity::Cos => -phase.sin(),
            Parity::Sin => phase.cos(),
        }
    }

    /// Exponential expansion `sum_m c_m e^{i m.x}`.
    fn terms(&self) -> [([i32; 2], [Complex64; 2]); 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e = [Complex64::new(self.direction[0] * s, 0.0), Complex64::new(self.direction[1] * s, 0.0)];
        let neg = [-self.k[0], -self.k[1]];
        match self.parity {
            Parity::Cos => [(self.k, e), (neg, e)],
            Parity::Sin => {
                let i = Complex64::i();
                [(self.k, [-i * e[0], -i * e[1]]), (neg, [i * e[0], i * e[1]])]
            }
        }
    }
}

/// Retained modes sorted by `|k|^2`, cos before sin.
pub fn snse_modes(k_max: usize) -> Vec<Mode> {
    let km = k_max as i32;
    let mut ks = Vec::new();
    for k1 in 0..=km {
        for k2 in -km..=km {
            if k1 > 0 || k2 > 0 {
                ks.push([k1, k2]);
            }
        }
    }
    ks.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
    ks.into_iter()
        .flat_map(|k| {
            let norm = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
            let perp = [-k[1], k[0]];
            let direction = [perp[0] as f64 / norm, perp[1] as f64 / norm];
            [Parity::Cos, Parity::Sin].map(|parity| Mode { k, parity, perp, direction })
        })
        .collect()
}

/// `T(a, b, c) = <(phi_a . grad) phi_b, phi_c>` over all retained modes,
/// row-major in `(a, b, c)`, antisymmetrized in `(b, c)`.
pub fn trilinear_tensor(modes: &[Mode]) -> Vec<f64> {
    let n = modes.len();
    let terms: Vec<_> = modes.iter().map(Mode::terms).collect();
    let mut raw = vec![0.0; n * n * n];
    raw.par_chunks_mut(n * n).enumerate().for_each(|(a, slab)| {
        for b in 0..n {
            for c in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (m, ca) in &terms[a] {
                    for (mp, cb) in &terms[b] {
                        for (mpp, cc) in &terms[c] {
                            if m[0] + mp[0] + mpp[0] != 0 || m[1] + mp[1] + mpp[1] != 0 {
                                continue;
                            }
                            let transport = Complex64::i() * (ca[0] * mp[0] as f64 + ca[1] * mp[1] as f64);
                            acc += transport * (cb[0] * cc[0] + cb[1] * cc[1]);
                        }
                    }
                }
                slab[b * n + c] = acc.re;
            }
        }
    });
    let mut t = vec![0.0; n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                t[(a * n + b) * n + c] = 0.5 * (raw[(a * n + b) * n + c] - raw[(a * n + c) * n + b]);
            }
        }
    }
    t
}

/// `dy = (-nu |k|^2 y - B(y, y)) dt + diag(sqrt(2 q)) dW`.
#[derive(Debug, Clone)]
pub struct SnseModel {
    name: String,
    config: SnseConfig,
    modes: Vec<Mode>,
    lambda: Vec<f64>,
    q: Vec<f64>,
    sigma: Vec<f64>,
    /// Per output coordinate `j`: `(a, b, c)` with `B_j(y, y) = sum c y_a y_b`, `a <= b`.
    triads: Vec<Vec<(u32, u32, f64)>>,
    /// `sum_j ||T(., ., j)||_F^2 / |k_j|^2`.
    convection_bound_sq: f64,
}

pub fn build_snse_coefficients(config: &SnseConfig) -> Result<SnseModel> {
    config.validate()?;
    let modes = snse_modes(config.k_max);
    let n = modes.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty mode set".into()));
    }
    let lambda: Vec<f64> = modes.iter().map(Mode::k_sq).collect();
    let q = match &config.q {
        Some(q) if q.len() != n => {
            return Err(Error::Dimension(format!("{} noise amplitudes for {n} modes", q.len())));
        }
        Some(q) => q.clone(),
        None => lambda.iter().map(|l| config.q0 * l.powf(-0.5 * config.decay)).collect(),
    };
    let sigma = q.iter().map(|v| (2.0 * v).sqrt()).collect();
    let t = trilinear_tensor(&modes);
    let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut triads = vec![Vec::new(); n];
    let mut frob = vec![0.0; n];
    for (j, list) in triads.iter_mut().enumerate() {
        for a in 0..n {
            for b in a..n {
                let c = if a == b {
                    t[(a * n + a) * n + j]
                } else {
                    t[(a * n + b) * n + j] + t[(b * n + a) * n + j]
                };
                if c.abs() > 1e-14 * scale {
                    list.push((a as u32, b as u32, c));
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                frob[j] += t[(a * n + b) * n + j].powi(2);
            }
        }
    }
    let convection_bound_sq = frob.iter().zip(&lambda).map(|(f, l)| f / l).sum();
    Ok(SnseModel {
        name: format!("snse(nu={},k_max={})", config.nu, config.k_max),
        config: config.clone(),
        modes,
        lambda,
        q,
        sigma,
        triads,
        convection_bound_sq,
    })
}

impl SnseModel {
    pub fn config(&self) -> &SnseConfig {
        &self.config
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// `|k_j|^2`, the weights of the enstrophy space.
    pub fn wavenumbers_sq(&self) -> &[f64] {
        &self.lambda
    }

    pub fn noise_amplitudes(&self) -> &[f64] {
        &self.q
    }

    /// `sum_k 2 q_k = ||sigma||_HS^2`.
    pub fn noise_trace(&self) -> f64 {
        self.q.iter().map(|v| 2.0 * v).sum()
    }

    pub fn triad_count(&self) -> usize {
        self.triads.iter().map(Vec::len).sum()
    }

    /// `B(y, y)` on the retained modes.
    pub fn convection(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.convection_into(y, &mut out);
        out
    }

    fn convection_into(&self, y: &[f64], out: &mut [f64]) {
        for (o, list) in out.iter_mut().zip(&self.triads) {
            *o = list.iter().map(|&(a, b, c)| c * y[a as usize] * y[b as usize]).sum();
        }
    }

    /// `X = l2(|k|^2)`.
    pub fn triple(&self) -> SpaceTriple {
        SpaceTriple::new(self.lambda.clone(), self.dim()).expect("|k|^2 is sorted and positive")
    }

    /// `N(v) = nu ||v||_X^2`.
    pub fn enstrophy(&self) -> NFunction {
        NFunction::weighted_square(&self.triple(), self.config.nu)
    }

    /// Constants for coercivity and growth with `gamma = 2`, `gamma' = 4`:
    /// `||b||_{X*}^2 <= 2 nu N(y) + 2 c_B^2 ||y||^4` where
    /// `c_B^2 = sum_j ||T(., ., j)||_F^2 / |k_j|^2`, and
    /// `||sigma||_HS^2 = sum 2 q_k`.
    pub fn assumption_params(&self) -> AssumptionParams {
        let nu = self.config.nu;
        let lambda3 = if self.config.convection && self.config.drift {
            (2.0 * self.convection_bound_sq).max(1e-12)
        } else {
            1e-12
        };
        AssumptionParams::new(1e-3, 2.0 * nu, lambda3, self.noise_trace().max(1e-12), 2.0, 4.0)
            .expect("derived constants are admissible")
    }

    /// `V = 1 + |y|^2`, `Theta = 2 nu |y|_X^2`, `C_0 = sum 2 q_k`,
    /// `M_0 = 4 max q_k`.
    pub fn lyapunov(&self) -> LyapunovData {
        let nu = if self.config.drift { self.config.nu } else { 0.0 };
        let lambda = self.lambda.clone();
        let m0 = 4.0 * self.q.iter().fold(0.0f64, |m, v| m.max(*v));
        LyapunovData::new(
            ScalarField::one_plus_square(),
            format!("{}*|y|_X^2", 2.0 * nu),
            move |y: &[f64]| 2.0 * nu * y.iter().zip(&lambda).map(|(v, l)| l * v * v).sum::<f64>(),
            self.noise_trace(),
            m0,
        )
        .expect("derived constants are admissible")
    }
}

impl CoefficientModel for SnseModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.modes.len()
    }

    fn noise_dim(&self) -> usize {
        self.modes.len()
    }

    fn horizon(&self) -> f64 {
        self.config.horizon
    }

    fn drift_into(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        if !self.config.drift {
            out.fill(0.0);
            return;
        }
        if self.config.convection {
            self.convection_into(y, out);
        } else {
            out.fill(0.0);
        }
        for ((o, l), v) in out.iter_mut().zip(&self.lambda).zip(y) {
            *o = -self.config.nu * l * v - *o;
        }
    }

    fn sigma_into(&self, _t: f64, _y: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out.fill(0.0);
        for (i, s) in self.sigma.iter().enumerate() {
            out[i * n + i] = *s;
        }
    }

    fn state_independent_diffusion(&self) -> bool {
        true
    }
}

/// Energy balance of an SNSE ensemble at each recorded node:
/// `lhs = E[|x(t)|^2 + 2 nu int_0^t |x|_X^2 ds]` against
/// `rhs = |x0|^2 + t sum 2 q_k`. The explicit scheme adds
/// `dt E int_0^t |b(x)|^2 ds` of energy, reported as `slack`. Without drift
/// the balance is an identity and is checked two-sided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnseEnergyReport {
    pub noise_only: bool,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub se: Vec<f64>,
    pub rhs: Vec<f64>,
    pub slack: Vec<f64>,
    pub max_abs_z: f64,
    pub verdict: Verdict,
}

pub fn snse_energy_check(ens: &PathEnsemble, model: &SnseModel) -> Result<SnseEnergyReport> {
    let n = model.dim();
    if ens.dim() != n {
        return Err(Error::Dimension(format!("ensemble on H_{} for an SNSE model on H_{n}", ens.dim())));
    }
    let noise_only = !model.config.drift;
    let nu = if noise_only { 0.0 } else { model.config.nu };
    let times = ens.times().to_vec();
    let dt = model.horizon() / ens.steps() as f64;
    let nodes = times.len();
    let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..ens.paths())
        .into_par_iter()
        .map(|p| {
            let mut b = vec![0.0; n];
            let mut energy = Vec::with_capacity(nodes);
            let mut excess = Vec::with_capacity(nodes);
            let (mut dissipated, mut inflation) = (0.0, 0.0);
            let (mut prev_x, mut prev_b) = (0.0, 0.0);
            for k in 0..nodes {
                let y = ens.state(k, p);
                let xs = y.iter().zip(&model.lambda).map(|(v, l)| l * v * v).sum::<f64>();
                model.drift_into(times[k], y, &mut b);
                let bs = b.iter().map(|v| v * v).sum::<f64>();
                if k > 0 {
                    let h = times[k] - times[k - 1];
                    dissipated += 0.5 * h * (xs + prev_x);
                    inflation += 0.5 * h * (bs + prev_b);
                }
                prev_x = xs;
                prev_b = bs;
                energy.push(y.iter().map(|v| v * v).sum::<f64>() + 2.0 * nu * dissipated);
                excess.push(dt * inflation);
            }
            (energy, excess)
        })
        .collect();
    let m = ens.paths() as f64;
    let x0_sq = ens.x0().iter().map(|v| v * v).sum::<f64>();
    let trace = model.noise_trace();
    let mut report = SnseEnergyReport {
        noise_only,
        times: times.clone(),
        lhs: Vec::with_capacity(nodes),
        se: Vec::with_capacity(nodes),
        rhs: Vec::with_capacity(nodes),
        slack: Vec::with_capacity(nodes),
        max_abs_z: 0.0,
        verdict: Verdict::Pass,
    };
    let mut ok = true;
    for (k, &t) in times.iter().enumerate() {
        let mean = per_path.iter().map(|(e, _)| e[k]).sum::<f64>() / m;
        let var = if ens.paths() > 1 {
            per_path.iter().map(|(e, _)| (e[k] - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        let se = (var / m).sqrt();
        let slack = per_path.iter().map(|(_, s)| s[k]).sum::<f64>() / m;
        let rhs = x0_sq + t * trace;
        let gap = mean - rhs;
        let z = if se > 0.0 {
            gap / se
        } else if gap.abs() <= 1e-12 * (1.0 + rhs) {
            0.0
        } else {
            gap.signum() * f64::INFINITY
        };
        let tol = 3.0 * se + 1e-12 * (1.0 + rhs);
        ok &= if noise_only { gap.abs() <= tol } else { gap <= tol + slack };
        report.max_abs_z = report.max_abs_z.max(if noise_only { z.abs() } else { z.max(0.0) });
        report.lhs.push(mean);
        report.se.push(se);
        report.rhs.push(rhs);
        report.slack.push(slack);
    }
    report.verdict = if ok { Verdict::Pass } else { Verdict::Fail };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::martingale::{simulate_em, SimConfig};

    #[test]
    fn mode_set_for_k_max_four() {
        let modes = snse_modes(4);
        assert_eq!(modes.len(), 80);
        assert_eq!(modes[0].k_sq(), 1.0);
        assert!(modes.windows(2).all(|w| w[0].k_sq() <= w[1].k_sq()));
        for m in &modes {
            assert_eq!(m.k[0] * m.perp[0] + m.k[1] * m.perp[1], 0);
            assert!((m.k[0] as f64 * m.direction[0] + m.k[1] as f64 * m.direction[1]).abs() <= 1e-15);
        }
    }

    #[test]
    fn lone_modes_are_stationary() {
        let model = build_snse_coefficients(&SnseConfig::default()).unwrap();
        let n = model.dim();
        for j in 0..n {
            let mut y = vec![0.0; n];
            y[j] = 1.0;
            assert!(model.convection(&y).iter().all(|v| v.abs() <= 1e-15));
        }
    }

    #[test]
    fn zero_data_zero_noise_stays_zero() {
        let cfg = SnseConfig {
            q0: 0.0,
            k_max: 2,
            ..SnseConfig::default()
        };
        let model = build_snse_coefficients(&cfg).unwrap();
        let ens = simulate_em(&model, &vec![0.0; model.dim()], &SimConfig::new(20, 4, 1)).unwrap();
        assert!(ens.raw_states().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            SnseConfig { nu: 0.0, ..SnseConfig::default() },
            SnseConfig { k_max: 0, ..SnseConfig::default() },
            SnseConfig { q: Some(vec![1.0; 3]), ..SnseConfig::default() },
        ] {
            assert!(build_snse_coefficients(&cfg).is_err());
        }
    }

    #[test]
    fn config_roundtrip() {
        let cfg: SnseConfig = serde_json::from_str(r#"{"nu": 0.2, "drift": false}"#).unwrap();
        assert_eq!((cfg.nu, cfg.k_max, cfg.drift, cfg.convection), (0.2, 4, false, true));
        assert!(serde_json::from_str::<SnseConfig>(r#"{"viscosity": 1}"#).is_err());
        let json = serde_json::to_string(&SnseConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<SnseConfig>(&json).unwrap(), SnseConfig::default());
    }
}
