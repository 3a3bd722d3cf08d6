//! Sampling-based certification of the coefficient hypotheses.
//!
//! A `Pass` verdict means no violation was found among the drawn samples;
//! it is evidence, not a proof. Margins are `rhs - lhs` of the checked
//! inequality, so a violation has negative margin.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lyapunov::{AssumptionParams, LyapunovData};
use super::{diffusion_matrix, hs_norm_sq, CoefficientModel};
use crate::space::{dot, norm_h_sq, NFunction, Norm, SpaceTriple};

/// Absolute slack on inequality margins.
pub const VIOLATION_TOL: f64 = 1e-9;

const PSD_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub t: f64,
    pub y: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub verdict: Verdict,
    pub worst_case: Option<WorstCase>,
    pub samples_used: usize,
}

impl CheckReport {
    /// Verdict from per-sample margins: pass iff every margin is `>= -tol`;
    /// any NaN margin makes the report indeterminate.
    pub fn from_margins(name: impl Into<String>, draws: &[(f64, Vec<f64>)], margins: &[f64], tol: f64) -> Self {
        let name = name.into();
        if margins.is_empty() {
            return CheckReport {
                name,
                verdict: Verdict::Indeterminate,
                worst_case: None,
                samples_used: 0,
            };
        }
        let nan = margins.iter().position(|m| m.is_nan());
        let worst = nan.unwrap_or_else(|| {
            margins
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |(bi, bm), (i, &m)| if m < bm { (i, m) } else { (bi, bm) })
                .0
        });
        let margin = margins[worst];
        let verdict = if nan.is_some() {
            Verdict::Indeterminate
        } else if margin >= -tol {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        let (t, y) = draws[worst % draws.len()].clone();
        CheckReport {
            name,
            verdict,
            worst_case: Some(WorstCase { t, y, margin }),
            samples_used: margins.len(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Worst over several reports (first failing / indeterminate wins).
    pub fn merge(name: impl Into<String>, reports: &[CheckReport]) -> CheckReport {
        let samples_used = reports.iter().map(|r| r.samples_used).sum();
        let rank = |v: Verdict| match v {
            Verdict::Fail => 0,
            Verdict::Indeterminate => 1,
            Verdict::Pass => 2,
        };
        let worst = reports.iter().min_by(|a, b| {
            rank(a.verdict).cmp(&rank(b.verdict)).then_with(|| {
                let ma = a.worst_case.as_ref().map_or(f64::INFINITY, |w| w.margin);
                let mb = b.worst_case.as_ref().map_or(f64::INFINITY, |w| w.margin);
                ma.total_cmp(&mb)
            })
        });
        CheckReport {
            name: name.into(),
            verdict: worst.map_or(Verdict::Indeterminate, |r| r.verdict),
            worst_case: worst.and_then(|r| r.worst_case.clone()),
            samples_used,
        }
    }
}

/// Deterministic sampling of `(t, y)`: `t` uniform on `[0, T]`, `|y|`
/// log-uniform on `[radius_min, radius_max]` with a Gaussian direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub seed: u64,
    pub samples: usize,
    #[serde(default = "default_rmin")]
    pub radius_min: f64,
    #[serde(default = "default_rmax")]
    pub radius_max: f64,
}

fn default_rmin() -> f64 {
    1e-2
}

fn default_rmax() -> f64 {
    1e2
}

impl SamplePlan {
    pub fn new(seed: u64, samples: usize) -> Self {
        SamplePlan {
            seed,
            samples,
            radius_min: default_rmin(),
            radius_max: default_rmax(),
        }
    }

    pub fn with_radii(mut self, radius_min: f64, radius_max: f64) -> Self {
        self.radius_min = radius_min;
        self.radius_max = radius_max;
        self
    }

    pub fn draws(&self, n: usize, horizon: f64) -> Vec<(f64, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (lo, hi) = (self.radius_min.ln(), self.radius_max.ln());
        (0..self.samples)
            .map(|_| {
                let t = rng.gen_range(0.0..=horizon);
                let r = if hi > lo { rng.gen_range(lo..hi).exp() } else { self.radius_min };
                (t, random_vector(&mut rng, n, r))
            })
            .collect()
    }
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = norm_h_sq(&v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x *= radius / norm);
    }
    v
}

fn margins_over<F>(draws: &[(f64, Vec<f64>)], f: F) -> Vec<f64>
where
    F: Fn(usize, f64, &[f64]) -> f64 + Sync,
{
    draws.par_iter().enumerate().map(|(i, (t, y))| f(i, *t, y)).collect()
}

fn psd_margin(a: &DMatrix<f64>) -> f64 {
    if a.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let asym = (a - a.transpose()).abs().max();
    let sym = (a + a.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    if asym > SYMMETRY_TOL {
        min_eig.min(-asym)
    } else {
        min_eig
    }
}

/// Symmetry and nonnegative definiteness of `A_n = 1/2 sigma sigma^T`.
/// Margin: smallest eigenvalue (or minus the asymmetry, if larger than 1e-12).
pub fn check_symmetry_psd(model: &dyn CoefficientModel, plan: &SamplePlan) -> CheckReport {
    check_matrix_field_psd("symmetry_psd", model.dim(), model.horizon(), plan, |t, y| {
        diffusion_matrix(model, t, y).ok()
    })
}

/// PSD check of an arbitrary matrix field (e.g. an injected `A` fixture).
pub fn check_matrix_field_psd<F>(name: &str, n: usize, horizon: f64, plan: &SamplePlan, field: F) -> CheckReport
where
    F: Fn(f64, &[f64]) -> Option<DMatrix<f64>> + Sync,
{
    let draws = plan.draws(n, horizon);
    let margins = margins_over(&draws, |_, t, y| field(t, y).map_or(f64::NAN, |a| psd_margin(&a)));
    CheckReport::from_margins(name, &draws, &margins, PSD_TOL)
}

/// `<b(t,v), v> <= -N(v) + lambda_1 (1 + |v|_H^2)`.
pub fn check_coercivity(
    model: &dyn CoefficientModel,
    nf: &NFunction,
    params: &AssumptionParams,
    plan: &SamplePlan,
) -> CheckReport {
    let draws = plan.draws(model.dim(), model.horizon());
    let margins = margins_over(&draws, |_, t, v| match model.drift(t, v) {
        Ok(b) => -nf.eval(v) + params.lambda1 * (1.0 + norm_h_sq(v)) - dot(&b, v),
        Err(_) => f64::NAN,
    });
    CheckReport::from_margins("coercivity", &draws, &margins, VIOLATION_TOL)
}

/// `|b|_{X*}^gamma <= lambda_2 N(y) + lambda_3 (1 + |y|_H^gamma')` and
/// `|sigma|_HS^2 <= lambda_4 (1 + |y|_H^2)`; margin is the smaller of the two.
pub fn check_growth(
    model: &dyn CoefficientModel,
    nf: &NFunction,
    params: &AssumptionParams,
    triple: &SpaceTriple,
    plan: &SamplePlan,
) -> CheckReport {
    let draws = plan.draws(model.dim(), model.horizon());
    let (n, m) = (model.dim(), model.noise_dim());
    let margins = margins_over(&draws, |_, t, y| {
        let Ok(b) = model.drift(t, y) else { return f64::NAN };
        let Ok(bx) = triple.norm(&b, Norm::XStar) else { return f64::NAN };
        let mut s = vec![0.0; n * m];
        model.sigma_into(t, y, &mut s);
        let yh = norm_h_sq(y);
        let drift_margin =
            params.lambda2 * nf.eval(y) + params.lambda3 * (1.0 + yh.powf(params.gamma_prime / 2.0)) - bx.powf(params.gamma);
        let noise_margin = params.lambda4 * (1.0 + yh) - hs_norm_sq(&s);
        drift_margin.min(noise_margin)
    });
    CheckReport::from_margins("growth", &draws, &margins, VIOLATION_TOL)
}

/// `LV <= C_0 V - Theta` and `sum a^{ij} d_i V d_j V <= M_0 V^2` on `H_n`.
pub fn check_lyapunov(model: &dyn CoefficientModel, lyap: &LyapunovData, plan: &SamplePlan) -> CheckReport {
    let n = model.dim();
    let draws = plan.draws(n, model.horizon());
    let margins = margins_over(&draws, |_, t, y| {
        let (Ok(b), Ok(a)) = (model.drift(t, y), diffusion_matrix(model, t, y)) else {
            return f64::NAN;
        };
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        let v = lyap.v.derivatives(y, &mut g, &mut h);
        let mut lv = dot(&b, &g);
        let mut carre = 0.0;
        for i in 0..n {
            for j in 0..n {
                lv += a[(i, j)] * h[i * n + j];
                carre += a[(i, j)] * g[i] * g[j];
            }
        }
        let first = lyap.c0 * v - lyap.theta(y) - lv;
        let second = lyap.m0 * v * v - carre;
        first.min(second)
    });
    CheckReport::from_margins("lyapunov", &draws, &margins, VIOLATION_TOL)
}

/// (H4): `|a^{ij}| + |b^i| <= C_i V^{k_i} (1 + kappa_i(Theta) Theta)` for `j <= i`.
pub fn check_local_growth(
    model: &dyn CoefficientModel,
    lyap: &LyapunovData,
    params: &AssumptionParams,
    plan: &SamplePlan,
) -> CheckReport {
    if params.envelopes.is_empty() {
        return CheckReport::from_margins("local_growth", &[], &[], VIOLATION_TOL);
    }
    let n = model.dim();
    let draws = plan.draws(n, model.horizon());
    let margins = margins_over(&draws, |_, t, y| {
        let (Ok(b), Ok(a)) = (model.drift(t, y), diffusion_matrix(model, t, y)) else {
            return f64::NAN;
        };
        let v = lyap.v.value(y);
        let theta = lyap.theta(y);
        let mut worst = f64::INFINITY;
        for i in 0..n {
            let env = params.envelope(i).expect("envelopes are nonempty");
            let rhs = env.c * v.powf(env.k) * (1.0 + env.kappa.eval(theta) * theta);
            for j in 0..=i {
                worst = worst.min(rhs - a[(i, j)].abs() - b[i].abs());
            }
        }
        worst
    });
    CheckReport::from_margins("local_growth", &draws, &margins, VIOLATION_TOL)
}

/// Result of the (N) check: the report plus the empirical constants `C_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NClassReport {
    pub report: CheckReport,
    pub constants: Vec<(usize, f64)>,
}

/// (N) and properties (i)-(ii) of the gauge class: for each `n` in
/// `levels`, `C_n = max N(v)/|v|^p` over samples (must be finite),
/// `N(v) > 0` for `v != 0`, `N(0) = 0` and `N(cv) <= c^rho N(v)`.
pub fn check_n_class(nf: &NFunction, triple: &SpaceTriple, levels: &[usize], plan: &SamplePlan) -> NClassReport {
    let mut all_draws = Vec::new();
    let mut margins = Vec::new();
    let mut constants = Vec::new();
    for &n in levels {
        if n == 0 || n > triple.n_max() {
            constants.push((n, f64::NAN));
            continue;
        }
        let draws = plan.draws(n, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x9e37_79b9_7f4a_7c15 ^ n as u64);
        let cs: Vec<f64> = draws.iter().map(|_| rng.gen_range(0.0..3.0)).collect();
        let mut c_n = 0.0f64;
        for ((_, v), c) in draws.iter().zip(&cs) {
            let nv = nf.eval(v);
            let ratio = nv / norm_h_sq(v).powf(nf.p() / 2.0);
            c_n = if ratio.is_finite() { c_n.max(ratio) } else { f64::NAN };
            let positivity: f64 = if norm_h_sq(v) > 0.0 && nv <= 0.0 { -1.0 } else { 0.0 };
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let homogeneity = c.powf(nf.rho()) * nv - nf.eval(&scaled);
            margins.push(if ratio.is_finite() { positivity.min(homogeneity) } else { f64::NEG_INFINITY });
        }
        let zero = vec![0.0; n];
        margins.push(-nf.eval(&zero).abs());
        all_draws.extend(draws);
        all_draws.push((0.0, zero));
        constants.push((n, c_n));
    }
    let mut report = CheckReport::from_margins("n_class", &all_draws, &margins, VIOLATION_TOL);
    if constants.iter().any(|(_, c)| !c.is_finite()) {
        report.verdict = Verdict::Fail;
    }
    NClassReport { report, constants }
}

const SEQUENCE_LEN: i32 = 20;

/// Ratio required between the last and first gap of a convergent sequence.
const TAIL_RATIO: f64 = 1e-4;

/// (A1) smoke test along `y_k = y + 2^-k r d`: the gaps
/// `|<b(t,y_k) - b(t,y), v>|` and `|sigma^T(t,y_k) v - sigma^T(t,y) v|`
/// must shrink by a factor `1e-4` over 20 halvings.
pub fn check_demicontinuity(model: &dyn CoefficientModel, plan: &SamplePlan) -> CheckReport {
    let (n, m) = (model.dim(), model.noise_dim());
    let draws = plan.draws(n, model.horizon());
    let margins = margins_over(&draws, |i, t, y| {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(1 + i as u64));
        let d = random_vector(&mut rng, n, 1.0);
        let v = random_vector(&mut rng, n, 1.0);
        let r = norm_h_sq(y).sqrt().max(1.0);
        let gap = |k: i32| -> Option<f64> {
            let yk: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + r * 2f64.powi(-k) * b).collect();
            let (b0, bk) = (model.drift(t, y).ok()?, model.drift(t, &yk).ok()?);
            let (s0, sk) = (model.sigma(t, y).ok()?, model.sigma(t, &yk).ok()?);
            let db = dot(&bk, &v) - dot(&b0, &v);
            let vv = nalgebra::DVector::from_column_slice(&v);
            let ds = (sk.transpose() * &vv - s0.transpose() * &vv).norm();
            debug_assert_eq!(s0.ncols(), m);
            Some(db.abs().max(ds))
        };
        match (gap(1), gap(SEQUENCE_LEN)) {
            (Some(first), Some(last)) => TAIL_RATIO * (1.0 + first) - last,
            _ => f64::NAN,
        }
    });
    CheckReport::from_margins("demicontinuity", &draws, &margins, VIOLATION_TOL)
}

/// (H2) as a modulus-of-continuity scan: for pairs `(y, y + delta d)` the
/// sup over 17 equispaced times of `|a^{ij}(t,.)|` and `|b^i(t,.)|`
/// differences must shrink by `1e-4` as `delta` goes from `r/2` to `r 2^-20`.
pub fn check_equicontinuity(model: &dyn CoefficientModel, plan: &SamplePlan) -> CheckReport {
    let n = model.dim();
    let horizon = model.horizon();
    let draws = plan.draws(n, horizon);
    let times: Vec<f64> = (0..=16).map(|j| horizon * j as f64 / 16.0).collect();
    let margins = margins_over(&draws, |i, _, y| {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(0x5eed + i as u64));
        let d = random_vector(&mut rng, n, 1.0);
        let r = norm_h_sq(y).sqrt().max(1.0);
        let modulus = |k: i32| -> Option<f64> {
            let yk: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + r * 2f64.powi(-k) * b).collect();
            let mut w = 0.0f64;
            for &t in &times {
                let da = diffusion_matrix(model, t, &yk).ok()? - diffusion_matrix(model, t, y).ok()?;
                let bk = model.drift(t, &yk).ok()?;
                let b0 = model.drift(t, y).ok()?;
                let db = bk.iter().zip(&b0).fold(0.0f64, |acc, (p, q)| acc.max((p - q).abs()));
                w = w.max(da.abs().max()).max(db);
            }
            Some(w)
        };
        match (modulus(1), modulus(SEQUENCE_LEN)) {
            (Some(first), Some(last)) => TAIL_RATIO * (1.0 + first) - last,
            _ => f64::NAN,
        }
    });
    CheckReport::from_margins("equicontinuity", &draws, &margins, VIOLATION_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{ClosureModel, LinearSde, ScalarField};

    fn plan() -> SamplePlan {
        SamplePlan::new(11, 400)
    }

    #[test]
    fn sigma_built_diffusion_is_psd() {
        let m = ClosureModel::new(
            "mult",
            3,
            2,
            1.0,
            |_, y, b| b.iter_mut().zip(y).for_each(|(o, v)| *o = -v),
            |t, y, s| {
                for i in 0..3 {
                    s[i * 2] = y[i] * (1.0 + t);
                    s[i * 2 + 1] = (y[(i + 1) % 3]).sin();
                }
            },
        );
        assert!(check_symmetry_psd(&m, &plan()).passed());
    }

    #[test]
    fn injected_negative_eigenvalue_fails_with_its_margin() {
        let r = check_matrix_field_psd("injected", 2, 1.0, &plan(), |_, _| {
            Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]))
        });
        assert_eq!(r.verdict, Verdict::Fail);
        assert!((r.worst_case.unwrap().margin + 0.1).abs() < 1e-12);
    }

    #[test]
    fn coercivity_of_stable_and_unstable_drifts() {
        let triple = SpaceTriple::flat(2).unwrap();
        let nf = NFunction::weighted_square(&triple, 1.0);
        let params = AssumptionParams::new(1.0, 1.0, 1.0, 1.0, 2.0, 2.0).unwrap();
        let stable = LinearSde::ou(2, 1.0, 1.0, 1.0).unwrap();
        assert!(check_coercivity(&stable, &nf, &params, &plan()).passed());

        let params0 = AssumptionParams::new(0.0, 1.0, 1.0, 1.0, 2.0, 2.0).unwrap();
        let unstable = LinearSde::ou(2, -1.0, 1.0, 1.0).unwrap();
        let r = check_coercivity(&unstable, &nf, &params0, &plan());
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.worst_case.unwrap().margin < 0.0);
    }

    #[test]
    fn growth_examples() {
        let triple = SpaceTriple::flat(2).unwrap();
        let nf = NFunction::weighted_square(&triple, 1.0);
        let params = AssumptionParams::new(0.0, 1.0, 1.0, 1.0, 2.0, 2.0).unwrap();
        assert!(check_growth(&LinearSde::zero(2, 1.0), &nf, &params, &triple, &plan()).passed());
        // |b|^2 = |y|^2 <= N(y); |sigma|^2 = 2 <= 2 (1 + |y|^2)
        let ou = LinearSde::ou(2, 1.0, 1.0, 1.0).unwrap();
        let params = AssumptionParams::new(0.0, 1.0, 1.0, 2.0, 2.0, 2.0).unwrap();
        assert!(check_growth(&ou, &nf, &params, &triple, &plan()).passed());
        // |sigma|_HS^2 = 2 |y|^4
        let quartic = ClosureModel::new(
            "quartic-noise",
            1,
            1,
            1.0,
            |_, _, b| b[0] = 0.0,
            |_, y, s| s[0] = 2f64.sqrt() * y[0] * y[0],
        );
        let triple1 = SpaceTriple::flat(1).unwrap();
        let nf1 = NFunction::weighted_square(&triple1, 1.0);
        let r = check_growth(&quartic, &nf1, &params, &triple1, &plan());
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(norm_h_sq(&r.worst_case.unwrap().y) > 1.0);
    }

    fn ou_lyapunov(theta: fn(&[f64]) -> f64, m0: f64) -> LyapunovData {
        LyapunovData::new(ScalarField::one_plus_square(), "theta", theta, 2.0, m0).unwrap()
    }

    #[test]
    fn lyapunov_examples() {
        let ou = LinearSde::ou(1, 1.0, 2f64.sqrt(), 1.0).unwrap();
        let good = ou_lyapunov(|y| 2.0 * y[0] * y[0], 4.0);
        assert!(check_lyapunov(&ou, &good, &plan()).passed());
        let bad = ou_lyapunov(|y| 10.0 + 10.0 * y[0].powi(4), 4.0);
        assert_eq!(check_lyapunov(&ou, &bad, &plan()).verdict, Verdict::Fail);
        // M0 too small for the carre-du-champ bound 4y^2 <= M0 (1+y^2)^2
        let tight = ou_lyapunov(|y| 2.0 * y[0] * y[0], 0.5);
        assert_eq!(check_lyapunov(&ou, &tight, &plan()).verdict, Verdict::Fail);
    }

    #[test]
    fn n_class_constants() {
        let triple = SpaceTriple::new(vec![1.0, 2.0], 2).unwrap();
        let nf = NFunction::weighted_square(&triple, 1.0);
        let r = check_n_class(&nf, &triple, &[1, 2], &plan());
        assert!(r.report.passed());
        let c2 = r.constants.iter().find(|(n, _)| *n == 2).unwrap().1;
        assert!(c2 <= 2.0 && c2 > 1.0);

        let h = NFunction::h_power(2.0);
        let r = check_n_class(&h, &triple, &[2], &plan());
        assert_eq!(r.constants, vec![(2, 1.0)]);

        let broken = NFunction::new("1+|v|^2", 2.0, 2.0, |v| 1.0 + norm_h_sq(v));
        assert_eq!(check_n_class(&broken, &triple, &[2], &plan()).report.verdict, Verdict::Fail);
    }

    #[test]
    fn continuity_smoke_tests() {
        let cubic = ClosureModel::new(
            "cubic",
            2,
            2,
            1.0,
            |t, y, b| {
                b[0] = -y[0].powi(3) + t;
                b[1] = y[0] * y[1];
            },
            |_, y, s| {
                s.fill(0.0);
                s[0] = 1.0 + y[1].sin();
                s[3] = y[0];
            },
        );
        assert!(check_demicontinuity(&cubic, &SamplePlan::new(3, 50)).passed());
        assert!(check_equicontinuity(&cubic, &SamplePlan::new(3, 50)).passed());

        let jump = ClosureModel::new(
            "jump",
            1,
            1,
            1.0,
            |_, y, b| b[0] = if y[0] > 0.0 { 1.0 } else { -1.0 },
            |_, _, s| s[0] = 1.0,
        );
        // the sequence starts at y and approaches along d; a sign flip inside
        // the first step is detected whenever the sampled point sits close to 0
        let plan = SamplePlan::new(5, 200).with_radii(1e-9, 1e-8);
        assert_eq!(check_demicontinuity(&jump, &plan).verdict, Verdict::Fail);
    }

    #[test]
    fn reports_are_deterministic_and_monotone_in_tolerance() {
        let ou = LinearSde::ou(2, 1.0, 1.0, 1.0).unwrap();
        let a = check_symmetry_psd(&ou, &plan());
        let b = check_symmetry_psd(&ou, &plan());
        assert_eq!(a, b);
        let draws = plan().draws(2, 1.0);
        let margins: Vec<f64> = (0..draws.len()).map(|i| -(i as f64) * 1e-3).collect();
        let mut last_pass = false;
        for tol in [0.0, 0.1, 0.3, 0.5, 1.0] {
            let pass = CheckReport::from_margins("m", &draws, &margins, tol).passed();
            assert!(pass || !last_pass);
            last_pass = pass;
        }
    }

    #[test]
    fn local_growth_of_ou() {
        let ou = LinearSde::ou(2, 1.0, 2f64.sqrt(), 1.0).unwrap();
        let lyap = ou_lyapunov(|y| 2.0 * norm_h_sq(y), 4.0);
        let env = crate::coefficients::ComponentEnvelope {
            c: 2.0,
            k: 1.0,
            kappa: crate::coefficients::Kappa::zero(),
        };
        let params = AssumptionParams::new(1.0, 1.0, 1.0, 2.0, 2.0, 2.0).unwrap().with_envelopes(vec![env]);
        assert!(check_local_growth(&ou, &lyap, &params, &plan()).passed());
        let none = AssumptionParams::new(1.0, 1.0, 1.0, 2.0, 2.0, 2.0).unwrap();
        assert_eq!(check_local_growth(&ou, &lyap, &none, &plan()).verdict, Verdict::Indeterminate);
    }
}
