//! Finite-`n` checks of the superposition statements: marginal coincidence
//! of flows and ensembles, the Lyapunov moment ledger, the (S2) integral and
//! Galerkin convergence tables.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{half_outer, moment_constants, w_k, CoefficientModel, LyapunovData, Verdict};
use crate::error::{Error, Result};
use crate::fpke::{MarginalFlow, Measure};
use crate::martingale::PathEnsemble;
use crate::space::FinitelyBasedFunction;

/// `max_f |int f d mu - int f d nu|` over `family`.
pub fn marginal_distance(mu: &Measure, nu: &Measure, family: &[FinitelyBasedFunction]) -> Result<f64> {
    let n = mu.dim().min(nu.dim());
    if let Some(f) = family.iter().find(|f| f.base_dim() > n) {
        return Err(Error::Dimension(format!("{} needs {} coordinates, measures live on H_{n}", f.label(), f.base_dim())));
    }
    Ok(family
        .iter()
        .map(|f| (mu.integrate_fn(f) - nu.integrate_fn(f)).abs())
        .fold(0.0, f64::max))
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `k`-th Lyapunov moment bound along a flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovLedger {
    pub k: u32,
    pub m_k: f64,
    pub n_k: f64,
    pub w_k: f64,
    pub rhs: f64,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub v_finite_fraction: f64,
    pub verdict: Verdict,
}

/// `lhs(t) = int V^k d mu_t + k int_0^t int V^{k-1} Theta d mu_s ds` against
/// `N_k W_k` at every node; passes iff `lhs <= rhs (1 + 1e-6)` throughout and
/// every node gives full mass to `{V < inf}`.
pub fn lyapunov_bound_check(flow: &MarginalFlow, lyap: &LyapunovData, k: u32, x0: &[f64]) -> Result<LyapunovLedger> {
    if k == 0 {
        return Err(Error::InvalidParameter("moment order k must be at least 1".into()));
    }
    let (m_k, n_k) = moment_constants(lyap.c0, lyap.m0, k);
    let wk = w_k(&lyap.v, x0, k);
    let rhs = n_k * wk;
    let kf = k as f64;
    let mut lhs = Vec::with_capacity(flow.times().len());
    let mut finite_mass = f64::INFINITY;
    let mut integral = 0.0;
    let mut prev = None;
    for (&t, mu) in flow.times().iter().zip(flow.nodes()) {
        let moment = mu.integrate(|y| lyap.v.value(y).powi(k as i32));
        let dissipation = mu.integrate(|y| lyap.v.value(y).powi(k as i32 - 1) * lyap.theta(y));
        let mass = mu.integrate(|y| if lyap.v.value(y).is_finite() { 1.0 } else { 0.0 });
        let total = mu.integrate(|_| 1.0);
        finite_mass = finite_mass.min(mass / total);
        if let Some((t0, d0)) = prev {
            integral += 0.5 * (t - t0) * (d0 + dissipation);
        }
        prev = Some((t, dissipation));
        lhs.push(moment + kf * integral);
    }
    let ok = lhs.iter().all(|v| *v <= rhs * (1.0 + 1e-6)) && finite_mass == 1.0;
    Ok(LyapunovLedger {
        k,
        m_k,
        n_k,
        w_k: wk,
        rhs,
        times: flow.times().to_vec(),
        lhs,
        v_finite_fraction: finite_mass,
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
    })
}

/// Matrix norm used for `|A_n(t, y)|` in the (S2) integrand.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorNorm {
    /// Largest singular value by power iteration (relative tolerance 1e-10).
    #[default]
    Spectral,
    /// Frobenius norm, an upper bound.
    Frobenius,
}

/// Largest eigenvalue of a symmetric PSD row-major matrix.
pub(crate) fn spectral_norm_psd(a: &[f64], n: usize) -> f64 {
    if n == 1 {
        return a[0].abs();
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        for i in 0..n {
            w[i] = (0..n).map(|j| a[i * n + j] * v[j]).sum();
        }
        let next = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let done = (next - lambda).abs() <= 1e-10 * next.max(f64::MIN_POSITIVE);
        lambda = next;
        std::mem::swap(&mut v, &mut w);
        if done {
            break;
        }
    }
    lambda
}

fn matrix_norm(a: &[f64], n: usize, norm: OperatorNorm) -> f64 {
    match norm {
        OperatorNorm::Spectral => spectral_norm_psd(a, n),
        OperatorNorm::Frobenius => a.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// `int_0^T int (|A_n(t,y)| + |<b_n(t,y), y>|) / (1 + |y|)^2 d mu_t dt`,
/// trapezoid in time.
pub fn s2_integrability(flow: &MarginalFlow, model: &dyn CoefficientModel, norm: OperatorNorm) -> Result<f64> {
    let (n, m) = (flow.dim(), model.noise_dim());
    if model.dim() != n {
        return Err(Error::Dimension(format!("model on H_{} for a flow on H_{n}", model.dim())));
    }
    let per_node: Vec<f64> = flow
        .times()
        .par_iter()
        .zip(flow.nodes())
        .map(|(&t, mu)| {
            let mut b = vec![0.0; n];
            let mut s = vec![0.0; n * m];
            let mut a = vec![0.0; n * n];
            let cached = if model.state_independent_diffusion() {
                model.sigma_into(t, &vec![0.0; n], &mut s);
                half_outer(&s, n, m, &mut a);
                Some(matrix_norm(&a, n, norm))
            } else {
                None
            };
            let mut acc = 0.0;
            mu.for_each(|y, w| {
                model.drift_into(t, y, &mut b);
                let a_norm = cached.unwrap_or_else(|| {
                    model.sigma_into(t, y, &mut s);
                    half_outer(&s, n, m, &mut a);
                    matrix_norm(&a, n, norm)
                });
                let by: f64 = b.iter().zip(y).map(|(p, q)| p * q).sum();
                let r = 1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt();
                acc += w * (a_norm + by.abs()) / (r * r);
            });
            acc
        })
        .collect();
    Ok(flow
        .times()
        .windows(2)
        .zip(per_node.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum())
}

/// Marginal coincidence of a flow and an ensemble, plus optional ledgers
/// filled in by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionReport {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub sup_distance: f64,
    pub tol: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lyapunov: Vec<LyapunovLedger>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2_integral: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceTable>,
}

/// Family distance between `flow(t)` and the ensemble marginal at every
/// ensemble node; the flow must contain each of those nodes.
pub fn verify_superposition(
    flow: &MarginalFlow,
    ens: &PathEnsemble,
    family: &[FinitelyBasedFunction],
    tol: f64,
) -> Result<SuperpositionReport> {
    if flow.dim() != ens.dim() {
        return Err(Error::GridMismatch(format!("flow on H_{}, ensemble on H_{}", flow.dim(), ens.dim())));
    }
    let pairs = ens
        .times()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            flow.index_of(t)
                .map(|j| (k, j))
                .map_err(|_| Error::GridMismatch(format!("ensemble node t = {t} is not a flow node")))
        })
        .collect::<Result<Vec<_>>>()?;
    let distances = pairs
        .par_iter()
        .map(|&(k, j)| marginal_distance(flow.node(j), &Measure::Empirical(ens.marginal_at(k)), family))
        .collect::<Result<Vec<_>>>()?;
    let sup_distance = distances.iter().copied().fold(0.0, f64::max);
    Ok(SuperpositionReport {
        times: ens.times().to_vec(),
        distances,
        sup_distance,
        tol,
        verdict: if sup_distance <= tol { Verdict::Pass } else { Verdict::Fail },
        lyapunov: Vec::new(),
        s2_integral: None,
        convergence: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub t: f64,
    pub n: usize,
    pub n_prime: usize,
    pub distance: f64,
}

/// Pairwise family distances across truncation levels, with the sup-in-time
/// distance of each level to the finest one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `(n, sup_t d(mu_n(t), mu_finest(t)))` for every coarser level.
    pub to_finest: Vec<(usize, f64)>,
    /// Distances to the finest level strictly decrease in `n`.
    pub decreasing: bool,
}

impl ConvergenceTable {
    /// CSV with columns `t, n, n_prime, distance`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compare flows at several truncation levels on a common family; every
/// flow must have nodes at all `times`.
pub fn galerkin_convergence(
    flows: &[(usize, MarginalFlow)],
    family: &[FinitelyBasedFunction],
    times: &[f64],
) -> Result<ConvergenceTable> {
    if flows.len() < 2 {
        return Err(Error::InvalidParameter("Galerkin convergence needs at least two levels".into()));
    }
    let mut levels: Vec<&(usize, MarginalFlow)> = flows.iter().collect();
    levels.sort_by_key(|(n, _)| *n);
    let min_n = levels.iter().map(|(_, f)| f.dim()).min().unwrap_or(0);
    if let Some(f) = family.iter().find(|f| f.base_dim() > min_n) {
        return Err(Error::Dimension(format!("{} exceeds the coarsest level H_{min_n}", f.label())));
    }
    // integrals[level][time][member]
    let integrals = levels
        .par_iter()
        .map(|(_, flow)| {
            times
                .iter()
                .map(|&t| {
                    let mu = flow.at(t)?;
                    Ok(family.iter().map(|f| mu.integrate_fn(f)).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        for i in 0..levels.len() {
            for j in i + 1..levels.len() {
                rows.push(ConvergenceRow {
                    t,
                    n: levels[i].0,
                    n_prime: levels[j].0,
                    distance: gap(&integrals[i][ti], &integrals[j][ti]),
                });
            }
        }
    }
    let finest = levels.len() - 1;
    let to_finest: Vec<(usize, f64)> = (0..finest)
        .map(|i| {
            let d = (0..times.len())
                .map(|ti| gap(&integrals[i][ti], &integrals[finest][ti]))
                .fold(0.0, f64::max);
            (levels[i].0, d)
        })
        .collect();
    let decreasing = to_finest.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(ConvergenceTable {
        rows,
        to_finest,
        decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{LinearSde, ScalarField};
    use crate::fpke::{EmpiricalMeasure, FlowKind};
    use crate::martingale::{simulate_em, SimConfig};
    use crate::reference::gaussian_expectation;
    use crate::space::separating_family;

    fn dirac(x: &[f64]) -> Measure {
        Measure::Empirical(EmpiricalMeasure::dirac(x).unwrap())
    }

    #[test]
    fn distance_basics() {
        let fam = separating_family(2, 4);
        assert_eq!(marginal_distance(&dirac(&[0.3, 0.1]), &dirac(&[0.3, 0.1]), &fam).unwrap(), 0.0);
        assert!(marginal_distance(&dirac(&[0.0, 0.0]), &dirac(&[1.0, 0.0]), &fam).unwrap() > 0.0);
        let three = separating_family(3, 2);
        assert!(marginal_distance(&dirac(&[0.0, 0.0]), &dirac(&[1.0, 0.0]), &three).is_err());
    }

    #[test]
    fn distance_between_shifted_gaussians() {
        let fam = separating_family(1, 4);
        let gh = |mean: f64| {
            let (x, w) = crate::reference::gauss_hermite(60);
            let pts = x.iter().map(|v| mean + 2f64.sqrt() * v).collect();
            let wts = w.iter().map(|v| v / std::f64::consts::PI.sqrt()).collect();
            Measure::Empirical(EmpiricalMeasure::weighted(1, pts, wts).unwrap())
        };
        let d = marginal_distance(&gh(0.0), &gh(0.1), &fam).unwrap();
        let oracle = fam
            .iter()
            .map(|f| {
                let a = gaussian_expectation(0.0, 1.0, 60, |y| f.value(&[y]));
                let b = gaussian_expectation(0.1, 1.0, 60, |y| f.value(&[y]));
                (a - b).abs()
            })
            .fold(0.0, f64::max);
        assert!((d - oracle).abs() < 1e-12);
    }

    #[test]
    fn self_consistency_and_mismatch() {
        let model = LinearSde::ou(1, 1.0, 1.0, 1.0).unwrap();
        let ens = simulate_em(&model, &[1.0], &SimConfig::new(20, 50, 1).with_record_every(5)).unwrap();
        let fam = separating_family(1, 4);
        let report = verify_superposition(&ens.to_flow().unwrap(), &ens, &fam, 1e-12).unwrap();
        assert!(report.distances.iter().all(|d| *d == 0.0));
        assert_eq!(report.verdict, Verdict::Pass);

        let other = simulate_em(&model, &[1.0], &SimConfig::new(30, 50, 1).with_record_every(10)).unwrap();
        assert!(matches!(
            verify_superposition(&other.to_flow().unwrap(), &ens, &fam, 1.0),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn spectral_norm_of_small_matrices() {
        assert_eq!(spectral_norm_psd(&[2.0], 1), 2.0);
        let a = [2.0, 1.0, 1.0, 2.0];
        assert!((spectral_norm_psd(&a, 2) - 3.0).abs() < 1e-9);
        assert_eq!(spectral_norm_psd(&[0.0; 4], 2), 0.0);
    }

    #[test]
    fn s2_of_static_and_ou_flows() {
        let zero = LinearSde::zero(1, 1.0);
        let times = vec![0.0, 0.5, 1.0];
        let nodes = vec![dirac(&[2.0]); 3];
        let flow = MarginalFlow::new(FlowKind::Particle, vec![2.0], times, nodes).unwrap();
        assert_eq!(s2_integrability(&flow, &zero, OperatorNorm::Spectral).unwrap(), 0.0);

        // A = 1, |<b, y>| = y^2 on the Dirac flow at y = 2: (1 + 4) / 9 over [0, 1]
        let ou = LinearSde::ou(1, 1.0, 2f64.sqrt(), 1.0).unwrap();
        let v = s2_integrability(&flow, &ou, OperatorNorm::Frobenius).unwrap();
        assert!((v - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_ledger_on_a_dirac_flow() {
        let lyap = LyapunovData::new(ScalarField::one_plus_square(), "2y^2", |y| 2.0 * y[0] * y[0], 2.0, 4.0).unwrap();
        let flow =
            MarginalFlow::new(FlowKind::Particle, vec![1.0], vec![0.0, 1.0], vec![dirac(&[1.0]), dirac(&[1.0])]).unwrap();
        let ledger = lyapunov_bound_check(&flow, &lyap, 1, &[1.0]).unwrap();
        assert_eq!(ledger.m_k, 2.0);
        assert_eq!(ledger.n_k, 2.0 * 2f64.exp() + 1.0);
        assert_eq!(ledger.w_k, 2.0);
        // V = 2 and Theta = 2 at y = 1: lhs(1) = 2 + 1 * 2
        assert_eq!(ledger.lhs, vec![2.0, 4.0]);
        assert_eq!(ledger.verdict, Verdict::Pass);
        assert_eq!(ledger.v_finite_fraction, 1.0);
    }

    #[test]
    fn convergence_needs_two_levels() {
        let flow =
            MarginalFlow::new(FlowKind::Particle, vec![0.0], vec![0.0, 1.0], vec![dirac(&[0.0]), dirac(&[0.0])]).unwrap();
        let fam = separating_family(1, 2);
        assert!(galerkin_convergence(&[(1, flow.clone())], &fam, &[1.0]).is_err());
        let table = galerkin_convergence(&[(1, flow.clone()), (1, flow)], &fam, &[0.0, 1.0]).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| r.distance == 0.0));
    }
}
