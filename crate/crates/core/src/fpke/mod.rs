//! Finite-dimensional probability solutions of the projected Cauchy problem:
//! a grid oracle for `n <= 2`, particle flows for any `n`, and the weak-form
//! residual that certifies either.

mod grid;
mod measure;

pub use grid::{solve_fpke_grid, GridSpec};
pub use measure::{Axis, EmpiricalMeasure, FlowKind, GridDensity, MarginalFlow, Measure};
pub(crate) use measure::node_index;

use crate::coefficients::{half_outer, CoefficientModel};
use crate::error::{Error, Result};
use crate::martingale::{simulate_em, SimConfig};
use crate::space::FinitelyBasedFunction;

/// Empirical law of an Euler-Maruyama ensemble at each recorded node.
pub fn solve_fpke_particle(model: &dyn CoefficientModel, x0: &[f64], config: &SimConfig) -> Result<MarginalFlow> {
    simulate_em(model, x0, config)?.to_flow()
}

/// `t_k -> int Lf(t_k, .) d mu_{t_k}` for `k <= upto`.
fn generator_integrals(
    flow: &MarginalFlow,
    f: &FinitelyBasedFunction,
    model: &dyn CoefficientModel,
    upto: usize,
) -> Vec<f64> {
    flow.times()[..=upto]
        .iter()
        .zip(flow.nodes())
        .map(|(&t, mu)| mu.integrate_generator(model, f, t))
        .collect()
}

fn trapezoid_prefix(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; values.len()];
    for k in 1..values.len() {
        acc[k] = acc[k - 1] + 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
    }
    acc
}

/// `|int f d mu_t - f(Pi_n x0) - int_0^t int Lf d mu_s ds|` with the time
/// integral by trapezoid on the flow's grid; `t` must be a node.
pub fn weak_residual(
    flow: &MarginalFlow,
    f: &FinitelyBasedFunction,
    model: &dyn CoefficientModel,
    t: f64,
) -> Result<f64> {
    Ok(weak_residuals(flow, f, model, &[t])?[0])
}

/// [`weak_residual`] at several nodes, sharing the generator integrals.
pub fn weak_residuals(
    flow: &MarginalFlow,
    f: &FinitelyBasedFunction,
    model: &dyn CoefficientModel,
    times: &[f64],
) -> Result<Vec<f64>> {
    check_model(flow, model)?;
    if f.base_dim() > flow.dim() {
        return Err(Error::Dimension(format!("test function of base dimension {} on H_{}", f.base_dim(), flow.dim())));
    }
    let idx = times.iter().map(|&t| flow.index_of(t)).collect::<Result<Vec<_>>>()?;
    let upto = idx.iter().copied().max().unwrap_or(0);
    let lf = generator_integrals(flow, f, model, upto);
    let integral = trapezoid_prefix(&flow.times()[..=upto], &lf);
    let f0 = f.value(flow.x0());
    Ok(idx
        .into_iter()
        .map(|k| (flow.node(k).integrate_fn(f) - f0 - integral[k]).abs())
        .collect())
}

/// `max_f max_k |int f d mu_{t_{k+1}} - int f d mu_{t_k}|`.
pub fn narrow_continuity_modulus(flow: &MarginalFlow, family: &[FinitelyBasedFunction]) -> f64 {
    family
        .iter()
        .map(|f| {
            let v = flow.integrals(f);
            v.windows(2).fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs()))
        })
        .fold(0.0, f64::max)
}

/// `int_0^T int (sum |a^{ij}| + sum |b^i|) d mu_t dt`; a non-finite value
/// rejects the flow as a solution candidate.
pub fn integrability_guard(flow: &MarginalFlow, model: &dyn CoefficientModel) -> Result<f64> {
    check_model(flow, model)?;
    let (n, m) = (flow.dim(), model.noise_dim());
    let per_node: Vec<f64> = flow
        .times()
        .iter()
        .zip(flow.nodes())
        .map(|(&t, mu)| {
            let mut b = vec![0.0; n];
            let mut s = vec![0.0; n * m];
            let mut a = vec![0.0; n * n];
            let mut acc = 0.0;
            mu.for_each(|y, w| {
                model.drift_into(t, y, &mut b);
                model.sigma_into(t, y, &mut s);
                half_outer(&s, n, m, &mut a);
                acc += w * (a.iter().chain(&b).map(|v| v.abs()).sum::<f64>());
            });
            acc
        })
        .collect();
    let total = *trapezoid_prefix(flow.times(), &per_node).last().expect("flows are nonempty");
    if !total.is_finite() {
        return Err(Error::NotASolution(format!("coefficients not integrable against the flow ({total})")));
    }
    Ok(total)
}

fn check_model(flow: &MarginalFlow, model: &dyn CoefficientModel) -> Result<()> {
    if model.dim() != flow.dim() {
        return Err(Error::Dimension(format!("model on H_{} for a flow on H_{}", model.dim(), flow.dim())));
    }
    if flow.horizon() > model.horizon() * (1.0 + 1e-12) {
        return Err(Error::TimeOutOfRange {
            t: flow.horizon(),
            lower: 0.0,
            upper: model.horizon(),
        });
    }
    Ok(())
}
