//! Measure-dependent coefficients, the freezing map onto linear models, a
//! Picard iteration on marginal flows and an interacting-particle oracle.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{
    check_coercivity, check_growth, check_symmetry_psd, AssumptionParams, CheckReport, CoefficientModel, SamplePlan,
    Verdict,
};
use crate::error::{Error, Result};
use crate::fpke::{integrability_guard, EmpiricalMeasure, FlowKind, MarginalFlow, Measure};
use crate::martingale::{martingale_test, simulate_em, within_guard, Conditioner, EmStep, MartingaleStat, PathEnsemble, SimConfig};
use crate::rng::stream_rng;
use crate::space::{FinitelyBasedFunction, NFunction, SpaceTriple};
use crate::superposition::{verify_superposition, SuperpositionReport};

/// A functional of the measure argument that the coefficients consume.
#[derive(Debug, Clone)]
pub enum Statistic {
    Mean(usize),
    SecondMoment(usize),
    Variance(usize),
    Expect(FinitelyBasedFunction),
}

impl Statistic {
    pub fn label(&self) -> String {
        match self {
            Statistic::Mean(i) => format!("mean[{}]", i + 1),
            Statistic::SecondMoment(i) => format!("m2[{}]", i + 1),
            Statistic::Variance(i) => format!("var[{}]", i + 1),
            Statistic::Expect(f) => format!("E[{}]", f.label()),
        }
    }

    pub fn evaluate(&self, mu: &Measure) -> f64 {
        match self {
            Statistic::Mean(i) => mu.integrate(|y| y[*i]),
            Statistic::SecondMoment(i) => mu.integrate(|y| y[*i] * y[*i]),
            Statistic::Variance(i) => {
                let m = mu.integrate(|y| y[*i]);
                mu.integrate(|y| (y[*i] - m) * (y[*i] - m))
            }
            Statistic::Expect(f) => mu.integrate_fn(f),
        }
    }

    fn evaluate_points(&self, points: &[f64], n: usize) -> f64 {
        let m = (points.len() / n) as f64;
        let avg = |g: &dyn Fn(&[f64]) -> f64| points.chunks_exact(n).map(g).sum::<f64>() / m;
        match self {
            Statistic::Mean(i) => avg(&|y| y[*i]),
            Statistic::SecondMoment(i) => avg(&|y| y[*i] * y[*i]),
            Statistic::Variance(i) => {
                let mean = avg(&|y| y[*i]);
                avg(&|y| (y[*i] - mean) * (y[*i] - mean))
            }
            Statistic::Expect(f) => avg(&|y| f.value(y)),
        }
    }
}

/// `b(t, y, rho)` and `sigma(t, y, rho)`, where `rho` enters only through
/// the declared statistics.
pub trait MeasureDependentCoefficients: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn statistics(&self) -> &[Statistic];

    /// `stats[j]` is the value of `statistics()[j]` at the measure.
    fn drift_into(&self, t: f64, y: &[f64], stats: &[f64], out: &mut [f64]);
    fn sigma_into(&self, t: f64, y: &[f64], stats: &[f64], out: &mut [f64]);

    fn state_independent_diffusion(&self) -> bool {
        false
    }

    fn measure_stats(&self, mu: &Measure) -> Vec<f64> {
        self.statistics().iter().map(|s| s.evaluate(mu)).collect()
    }
}

/// `dX = -(X - a E[X]) dt + sigma dW` in each of `n` coordinates.
#[derive(Debug, Clone)]
pub struct MeanFieldOu {
    name: String,
    n: usize,
    a: f64,
    sigma: f64,
    horizon: f64,
    stats: Vec<Statistic>,
}

impl MeanFieldOu {
    pub fn new(n: usize, a: f64, sigma: f64, horizon: f64) -> Result<Self> {
        if n == 0 || !(horizon > 0.0) || !a.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("mean-field OU n = {n}, a = {a}, T = {horizon}")));
        }
        Ok(MeanFieldOu {
            name: format!("mean-field-ou(a={a},sigma={sigma})"),
            n,
            a,
            sigma,
            horizon,
            stats: (0..n).map(Statistic::Mean).collect(),
        })
    }

    /// `E X_t = x0 e^{(a-1)t}` per coordinate.
    pub fn mean(&self, x0: f64, t: f64) -> f64 {
        x0 * ((self.a - 1.0) * t).exp()
    }
}

impl MeasureDependentCoefficients for MeanFieldOu {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn noise_dim(&self) -> usize {
        self.n
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn statistics(&self) -> &[Statistic] {
        &self.stats
    }

    fn drift_into(&self, _t: f64, y: &[f64], stats: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = -(y[i] - self.a * stats[i]);
        }
    }

    fn sigma_into(&self, _t: f64, _y: &[f64], _stats: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.n {
            out[i * self.n + i] = self.sigma;
        }
    }

    fn state_independent_diffusion(&self) -> bool {
        true
    }
}

type NlField = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;

/// Measure-dependent coefficients from closures over `(t, y, stats)`.
#[derive(Clone)]
pub struct MeasureClosureModel {
    name: String,
    dim: usize,
    noise_dim: usize,
    horizon: f64,
    stats: Vec<Statistic>,
    drift: Arc<NlField>,
    sigma: Arc<NlField>,
}

impl MeasureClosureModel {
    pub fn new<B, S>(
        name: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        horizon: f64,
        stats: Vec<Statistic>,
        drift: B,
        sigma: S,
    ) -> Self
    where
        B: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        MeasureClosureModel {
            name: name.into(),
            dim,
            noise_dim,
            horizon,
            stats,
            drift: Arc::new(drift),
            sigma: Arc::new(sigma),
        }
    }
}

impl MeasureDependentCoefficients for MeasureClosureModel {
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

    fn statistics(&self) -> &[Statistic] {
        &self.stats
    }

    fn drift_into(&self, t: f64, y: &[f64], stats: &[f64], out: &mut [f64]) {
        (self.drift)(t, y, stats, out)
    }

    fn sigma_into(&self, t: f64, y: &[f64], stats: &[f64], out: &mut [f64]) {
        (self.sigma)(t, y, stats, out)
    }
}

/// Linear model `b(t, y) = b_nl(t, y, mu_t)`, `sigma(t, y) = sigma_nl(t, y, mu_t)`
/// with `mu_t` taken at the nearest node of the frozen flow.
pub struct FrozenModel<'a> {
    model: &'a dyn MeasureDependentCoefficients,
    name: String,
    times: Vec<f64>,
    stats: Vec<Vec<f64>>,
}

impl FrozenModel<'_> {
    fn lookup(&self, t: f64) -> &[f64] {
        let k = self.times.partition_point(|&s| s < t);
        let k = if k == 0 {
            0
        } else if k == self.times.len() || t - self.times[k - 1] <= self.times[k] - t {
            k - 1
        } else {
            k
        };
        &self.stats[k]
    }

    /// Statistics of the frozen measure at every node.
    pub fn node_stats(&self) -> &[Vec<f64>] {
        &self.stats
    }
}

impl CoefficientModel for FrozenModel<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }

    fn horizon(&self) -> f64 {
        self.model.horizon()
    }

    fn drift_into(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.model.drift_into(t, y, self.lookup(t), out)
    }

    fn sigma_into(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.model.sigma_into(t, y, self.lookup(t), out)
    }

    fn state_independent_diffusion(&self) -> bool {
        self.model.state_independent_diffusion()
    }
}

/// Freeze the measure argument along `flow`, which must cover `[0, T]`.
pub fn freeze<'a>(model: &'a dyn MeasureDependentCoefficients, flow: &MarginalFlow) -> Result<FrozenModel<'a>> {
    let stats = flow.nodes().iter().map(|mu| model.measure_stats(mu)).collect();
    frozen_from_stats(model, flow.times().to_vec(), stats, flow.dim())
}

fn frozen_from_stats<'a>(
    model: &'a dyn MeasureDependentCoefficients,
    times: Vec<f64>,
    stats: Vec<Vec<f64>>,
    n: usize,
) -> Result<FrozenModel<'a>> {
    if n != model.dim() {
        return Err(Error::Dimension(format!("flow on H_{n} for a model on H_{}", model.dim())));
    }
    let horizon = model.horizon();
    let (lo, hi) = (times[0], *times.last().expect("flows are nonempty"));
    if lo > 1e-12 || hi < horizon * (1.0 - 1e-12) {
        return Err(Error::TimeOutOfRange { t: horizon, lower: lo, upper: hi });
    }
    Ok(FrozenModel {
        model,
        name: format!("frozen({})", model.name()),
        times,
        stats,
    })
}

/// Freeze at one fixed measure for all times.
pub fn freeze_at<'a>(model: &'a dyn MeasureDependentCoefficients, mu: &Measure) -> Result<FrozenModel<'a>> {
    let stats = model.measure_stats(mu);
    frozen_from_stats(model, vec![0.0, model.horizon()], vec![stats.clone(), stats], mu.dim())
}

/// Stopping rule of [`solve_mkv_picard`].
#[derive(Debug, Clone)]
pub struct PicardConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub family: Vec<FinitelyBasedFunction>,
}

/// Last iterate of the Picard scheme with its distance trace; `trace[j]`
/// is the sup-in-time family distance between iterates `j+1` and `j`.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub flow: MarginalFlow,
    pub ensemble: PathEnsemble,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

fn node_integrals(ens: &PathEnsemble, family: &[FinitelyBasedFunction]) -> Vec<Vec<f64>> {
    let (n, m) = (ens.dim(), ens.paths() as f64);
    (0..ens.times().len())
        .into_par_iter()
        .map(|k| {
            family
                .iter()
                .map(|f| ens.node(k).chunks_exact(n).map(|y| f.value(y)).sum::<f64>() / m)
                .collect()
        })
        .collect()
}

fn sup_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Fixed-point iteration on marginal flows. Iterate 0 simulates the model
/// frozen at the constant flow `delta_{x0}`; iterate `j` re-freezes at the
/// marginals of iterate `j-1`. Every iterate reuses `config.seed`, so the
/// map is deterministic given the noise and successive distances measure
/// the contraction rather than resampling error. The result is the first
/// iterate `j >= 1` within `tol` of its predecessor.
pub fn solve_mkv_picard(
    model: &dyn MeasureDependentCoefficients,
    x0: &[f64],
    config: &SimConfig,
    picard: &PicardConfig,
) -> Result<PicardOutcome> {
    if !(picard.tol > 0.0) || picard.family.is_empty() || picard.max_iters == 0 {
        return Err(Error::InvalidParameter("Picard needs tol > 0, a nonempty family and max_iters >= 1".into()));
    }
    config.validate()?;
    let n = model.dim();
    if x0.len() < n {
        return Err(Error::Dimension(format!("initial datum of length {} on H_{n}", x0.len())));
    }
    let horizon = model.horizon();
    let times: Vec<f64> = config
        .recorded_steps()
        .iter()
        .map(|&k| horizon * k as f64 / config.steps as f64)
        .collect();
    let guess = Measure::Empirical(EmpiricalMeasure::dirac(&x0[..n])?);
    let guess_stats = model.measure_stats(&guess);
    let mut stats = vec![guess_stats; times.len()];
    let mut prev: Option<(PathEnsemble, Vec<Vec<f64>>)> = None;
    let mut trace = Vec::new();
    for iterate in 0..=picard.max_iters {
        let frozen = frozen_from_stats(model, times.clone(), stats, n)?;
        let ens = simulate_em(&frozen, x0, config).map_err(|e| Error::Picard {
            iterate,
            source: Box::new(e),
        })?;
        let integrals = node_integrals(&ens, &picard.family);
        stats = (0..ens.times().len())
            .map(|k| model.statistics().iter().map(|s| s.evaluate_points(ens.node(k), n)).collect())
            .collect();
        if let Some((_, before)) = &prev {
            let d = sup_gap(&integrals, before);
            trace.push(d);
            if d <= picard.tol {
                return Ok(PicardOutcome {
                    flow: ens.to_flow()?,
                    ensemble: ens,
                    iterations: iterate,
                    converged: true,
                    trace,
                });
            }
        }
        prev = Some((ens, integrals));
    }
    let (ens, _) = prev.expect("at least one iterate ran");
    Ok(PicardOutcome {
        flow: ens.to_flow()?,
        ensemble: ens,
        iterations: picard.max_iters,
        converged: false,
        trace,
    })
}

/// `M` particles coupled through their own empirical measure at each step;
/// particle `p` uses stream `p` of `seed`.
pub fn solve_mkv_interacting(
    model: &dyn MeasureDependentCoefficients,
    x0: &[f64],
    config: &SimConfig,
) -> Result<(MarginalFlow, PathEnsemble)> {
    config.validate()?;
    let (n, m) = (model.dim(), model.noise_dim());
    if x0.len() < n {
        return Err(Error::Dimension(format!("initial datum of length {} on H_{n}", x0.len())));
    }
    let horizon = model.horizon();
    let dt = horizon / config.steps as f64;
    let paths = config.paths;
    let mut rngs: Vec<_> = (0..paths).map(|p| stream_rng(config.seed, p as u64)).collect();
    let mut state: Vec<f64> = x0[..n].iter().copied().cycle().take(paths * n).collect();
    let recorded = config.recorded_steps();
    let mut states = Vec::with_capacity(recorded.len() * paths * n);
    states.extend_from_slice(&state);
    for k in 0..config.steps {
        let t = horizon * k as f64 / config.steps as f64;
        let stats: Vec<f64> = model.statistics().iter().map(|s| s.evaluate_points(&state, n)).collect();
        let failures: Vec<Option<(usize, f64)>> = state
            .par_chunks_mut(n)
            .zip(rngs.par_iter_mut())
            .enumerate()
            .map(|(p, (y, rng))| {
                let mut em = EmStep::new(n, m);
                model.drift_into(t, y, &stats, &mut em.b);
                model.sigma_into(t, y, &stats, &mut em.s);
                em.advance(y, dt, rng);
                within_guard(y, config.guard).err().map(|norm| (p, norm))
            })
            .collect();
        if let Some((path, norm)) = failures.into_iter().flatten().next() {
            return Err(Error::Divergence { path, step: k + 1, norm });
        }
        if (k + 1) % config.record_every == 0 || k + 1 == config.steps {
            states.extend_from_slice(&state);
        }
    }
    let times = recorded.iter().map(|&k| horizon * k as f64 / config.steps as f64).collect();
    let ens = PathEnsemble::from_parts(
        format!("interacting({})", model.name()),
        n,
        paths,
        config.seed,
        config.steps,
        times,
        states,
    )?;
    Ok((ens.to_flow()?, ens))
}

/// Superposition of a candidate nonlinear solution: marginal coincidence
/// under the frozen coefficients, their integrability along the flow, and
/// the martingale statistics of the frozen problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearReport {
    pub superposition: SuperpositionReport,
    pub integrability: f64,
    pub martingale: Vec<MartingaleStat>,
    pub max_abs_z: f64,
    pub z_limit: f64,
    pub verdict: Verdict,
}

/// Runs on the model frozen at `flow`; the martingale suite uses up to five
/// family members on `[T/2, T]` conditioned on `1` and on their own value at
/// `T/2`, and passes iff every `|z| <= 4`.
pub fn verify_nonlinear_superposition(
    model: &dyn MeasureDependentCoefficients,
    flow: &MarginalFlow,
    ens: &PathEnsemble,
    family: &[FinitelyBasedFunction],
    tol: f64,
) -> Result<NonlinearReport> {
    let frozen = freeze(model, flow)?;
    let superposition = verify_superposition(flow, ens, family, tol)?;
    let integrability = integrability_guard(flow, &frozen)?;
    let times = ens.times();
    let t = *times.last().expect("ensembles are nonempty");
    let s = times[times.partition_point(|&v| v < 0.5 * t).min(times.len() - 2)];
    let mut martingale = Vec::new();
    for f in family.iter().take(5) {
        let conds = [Conditioner::one(), Conditioner::new(vec![(s, f.clone())])?];
        martingale.extend(martingale_test(ens, f, &frozen, s, t, &conds)?);
    }
    let z_limit = 4.0;
    let max_abs_z = martingale.iter().map(|m| m.z.abs()).fold(0.0, f64::max);
    let ok = superposition.verdict == Verdict::Pass && integrability.is_finite() && max_abs_z <= z_limit;
    Ok(NonlinearReport {
        superposition,
        integrability,
        martingale,
        max_abs_z,
        z_limit,
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
    })
}

/// Inputs of [`check_measure_uniform`]: one set of constants that must work
/// for every sampled measure.
#[derive(Debug, Clone)]
pub struct UniformChecks {
    pub nf: NFunction,
    pub params: AssumptionParams,
    pub triple: SpaceTriple,
    pub plan: SamplePlan,
}

/// Coercivity, growth and symmetry/PSD of the coefficients frozen at each
/// sampled measure, with measure-independent constants.
pub fn check_measure_uniform(
    model: &dyn MeasureDependentCoefficients,
    measures: &[Measure],
    checks: &UniformChecks,
) -> CheckReport {
    let mut reports = Vec::new();
    for mu in measures {
        let Ok(frozen) = freeze_at(model, mu) else {
            reports.push(CheckReport::from_margins("frozen", &[], &[], 0.0));
            continue;
        };
        reports.push(check_coercivity(&frozen, &checks.nf, &checks.params, &checks.plan));
        reports.push(check_growth(&frozen, &checks.nf, &checks.params, &checks.triple, &checks.plan));
        reports.push(check_symmetry_psd(&frozen, &checks.plan));
    }
    CheckReport::merge("measure_uniform", &reports)
}

/// Particle flow of the model frozen at a fixed measure (used by tests and
/// by the pipeline to compare frozen dynamics).
pub fn particle_flow_frozen(
    model: &dyn MeasureDependentCoefficients,
    flow: &MarginalFlow,
    x0: &[f64],
    config: &SimConfig,
) -> Result<(MarginalFlow, PathEnsemble)> {
    let frozen = freeze(model, flow)?;
    let ens = simulate_em(&frozen, x0, config)?;
    let out = ens.to_flow()?;
    debug_assert_eq!(out.kind(), FlowKind::Particle);
    Ok((out, ens))
}
