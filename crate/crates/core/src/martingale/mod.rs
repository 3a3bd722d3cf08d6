//! Euler-Maruyama ensembles for the projected martingale problems and the
//! statistics that test them.

mod stats;

pub use stats::{martingale_test, write_stats_csv, Conditioner, MartingaleStat};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientModel;
use crate::error::{Error, Result};
use crate::fpke::{node_index, EmpiricalMeasure, FlowKind, MarginalFlow, Measure};
use crate::rng::stream_rng;
use crate::space::NFunction;

/// Time stepping and sampling parameters of [`simulate_em`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    /// Keep every `record_every`-th step (the last step is always kept).
    #[serde(default = "one")]
    pub record_every: usize,
    /// Paths leaving the ball of this radius abort the run.
    #[serde(default = "default_guard")]
    pub guard: f64,
}

fn one() -> usize {
    1
}

fn default_guard() -> f64 {
    1e8
}

impl SimConfig {
    pub fn new(steps: usize, paths: usize, seed: u64) -> Self {
        SimConfig {
            steps,
            paths,
            seed,
            record_every: 1,
            guard: default_guard(),
        }
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_paths(mut self, paths: usize) -> Self {
        self.paths = paths;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.paths == 0 || self.record_every == 0 {
            return Err(Error::InvalidParameter("steps, paths and record_every must be positive".into()));
        }
        if !(self.guard > 0.0) {
            return Err(Error::InvalidParameter(format!("guard radius {}", self.guard)));
        }
        Ok(())
    }

    /// Step indices that are recorded, starting with 0.
    pub(crate) fn recorded_steps(&self) -> Vec<usize> {
        (0..=self.steps)
            .filter(|k| k % self.record_every == 0 || *k == self.steps)
            .collect()
    }
}

/// `M` sampled paths on the recorded time grid, stored node-major:
/// the `M x n` block of node `k` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    model: String,
    n: usize,
    paths: usize,
    seed: u64,
    steps: usize,
    times: Vec<f64>,
    states: Vec<f64>,
}

impl PathEnsemble {
    pub(crate) fn from_parts(
        model: String,
        n: usize,
        paths: usize,
        seed: u64,
        steps: usize,
        times: Vec<f64>,
        states: Vec<f64>,
    ) -> Result<Self> {
        if states.len() != times.len() * paths * n {
            return Err(Error::Dimension(format!(
                "{} states for {} nodes x {paths} paths x {n} coordinates",
                states.len(),
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("time grid must be strictly increasing".into()));
        }
        Ok(PathEnsemble {
            model,
            n,
            paths,
            seed,
            steps,
            times,
            states,
        })
    }

    pub fn model_name(&self) -> &str {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of Euler steps (not recorded nodes).
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn x0(&self) -> &[f64] {
        self.state(0, 0)
    }

    /// States of all paths at node `k` (`M * n` values).
    pub fn node(&self, k: usize) -> &[f64] {
        let block = self.paths * self.n;
        &self.states[k * block..(k + 1) * block]
    }

    pub fn state(&self, k: usize, path: usize) -> &[f64] {
        let start = (k * self.paths + path) * self.n;
        &self.states[start..start + self.n]
    }

    pub fn raw_states(&self) -> &[f64] {
        &self.states
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        node_index(&self.times, t)
    }

    pub fn marginal_at(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.n, self.node(k).to_vec()).expect("ensemble states are finite")
    }

    /// Equally weighted empirical law of `x(t)`; `t` must be a node.
    pub fn marginal(&self, t: f64) -> Result<EmpiricalMeasure> {
        Ok(self.marginal_at(self.index_of(t)?))
    }

    pub fn to_flow(&self) -> Result<MarginalFlow> {
        let nodes = (0..self.times.len()).map(|k| Measure::Empirical(self.marginal_at(k))).collect();
        MarginalFlow::new(FlowKind::Particle, self.x0().to_vec(), self.times.clone(), nodes)
    }
}

/// Scratch buffers of one Euler-Maruyama path.
pub(crate) struct EmStep {
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    pub xi: Vec<f64>,
}

impl EmStep {
    pub fn new(n: usize, m: usize) -> Self {
        EmStep {
            b: vec![0.0; n],
            s: vec![0.0; n * m],
            xi: vec![0.0; m],
        }
    }

    /// `y += b dt + S sqrt(dt) xi` with drift and sigma already loaded.
    pub fn advance(&mut self, y: &mut [f64], dt: f64, rng: &mut ChaCha8Rng) {
        let m = self.xi.len();
        self.xi.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        let sq = dt.sqrt();
        for (i, yi) in y.iter_mut().enumerate() {
            let mut noise = 0.0;
            for (k, xi) in self.xi.iter().enumerate() {
                noise += self.s[i * m + k] * xi;
            }
            *yi += self.b[i] * dt + noise * sq;
        }
    }
}

/// `Err(norm)` once the state is non-finite or leaves the guard ball.
pub(crate) fn within_guard(y: &[f64], guard: f64) -> std::result::Result<(), f64> {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_finite() && norm <= guard {
        Ok(())
    } else {
        Err(norm)
    }
}

/// Explicit Euler-Maruyama ensemble of `dY = b dt + sigma dW`,
/// `Y_0 = Pi_n x0`; path `p` draws its increments from stream `p` of `seed`.
pub fn simulate_em(model: &dyn CoefficientModel, x0: &[f64], config: &SimConfig) -> Result<PathEnsemble> {
    config.validate()?;
    let (n, m) = (model.dim(), model.noise_dim());
    if x0.len() < n {
        return Err(Error::Dimension(format!("initial datum of length {} on H_{n}", x0.len())));
    }
    let start = &x0[..n];
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite initial datum".into()));
    }
    let horizon = model.horizon();
    let dt = horizon / config.steps as f64;
    let recorded = config.recorded_steps();
    let nodes = recorded.len();

    let run_path = |p: usize| -> std::result::Result<Vec<f64>, Error> {
        let mut rng = stream_rng(config.seed, p as u64);
        let mut em = EmStep::new(n, m);
        let mut y = start.to_vec();
        let mut out = Vec::with_capacity(nodes * n);
        out.extend_from_slice(&y);
        for k in 0..config.steps {
            let t = horizon * k as f64 / config.steps as f64;
            model.drift_into(t, &y, &mut em.b);
            model.sigma_into(t, &y, &mut em.s);
            em.advance(&mut y, dt, &mut rng);
            if let Err(norm) = within_guard(&y, config.guard) {
                return Err(Error::Divergence { path: p, step: k + 1, norm });
            }
            if (k + 1) % config.record_every == 0 || k + 1 == config.steps {
                out.extend_from_slice(&y);
            }
        }
        Ok(out)
    };
    let per_path: Vec<Result<Vec<f64>>> = (0..config.paths).into_par_iter().map(run_path).collect();

    let mut states = vec![0.0; nodes * config.paths * n];
    for (p, path) in per_path.into_iter().enumerate() {
        let path = path?;
        for k in 0..nodes {
            let dst = (k * config.paths + p) * n;
            states[dst..dst + n].copy_from_slice(&path[k * n..(k + 1) * n]);
        }
    }
    let times = recorded.iter().map(|&k| horizon * k as f64 / config.steps as f64).collect();
    PathEnsemble::from_parts(model.name().to_string(), n, config.paths, config.seed, config.steps, times, states)
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Largest per-path value of `int_0^T |b(s, x(s))| ds + int_0^T |sigma|_HS^2 ds`
/// (trapezoid on the recorded grid); non-finite values reject the ensemble.
pub fn m1_integrability(ens: &PathEnsemble, model: &dyn CoefficientModel) -> Result<f64> {
    let (n, m) = (ens.dim(), model.noise_dim());
    if model.dim() != n {
        return Err(Error::Dimension(format!("model on H_{} for an ensemble on H_{n}", model.dim())));
    }
    let per_path: Vec<f64> = (0..ens.paths())
        .into_par_iter()
        .map(|p| {
            let mut b = vec![0.0; n];
            let mut s = vec![0.0; n * m];
            let values: Vec<f64> = ens
                .times()
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let y = ens.state(k, p);
                    model.drift_into(t, y, &mut b);
                    model.sigma_into(t, y, &mut s);
                    b.iter().map(|v| v * v).sum::<f64>().sqrt() + s.iter().map(|v| v * v).sum::<f64>()
                })
                .collect();
            trapezoid(ens.times(), &values)
        })
        .collect();
    let worst = per_path.iter().fold(0.0f64, |w, v| if v.is_nan() { f64::NAN } else { w.max(*v) });
    if !worst.is_finite() {
        return Err(Error::NotASolution(format!("path integrability guard is {worst}")));
    }
    Ok(worst)
}

/// Monte Carlo estimate of
/// `E[ sup_t |x(t)|^{2q} + int_0^T |x(t)|^{2(q-1)} N(x(t)) dt ]`
/// (sup over recorded nodes, trapezoid in time); non-finite estimates are
/// reported as `f64::INFINITY`.
pub fn energy_estimate(ens: &PathEnsemble, q: f64, nf: &NFunction) -> f64 {
    if !(q >= 1.0) {
        return f64::INFINITY;
    }
    let per_path: Vec<f64> = (0..ens.paths())
        .into_par_iter()
        .map(|p| {
            let mut sup = 0.0f64;
            let values: Vec<f64> = (0..ens.times().len())
                .map(|k| {
                    let y = ens.state(k, p);
                    let h2 = y.iter().map(|v| v * v).sum::<f64>();
                    sup = sup.max(h2.powf(q));
                    h2.powf(q - 1.0) * nf.eval(y)
                })
                .collect();
            sup + trapezoid(ens.times(), &values)
        })
        .collect();
    let mean = per_path.iter().sum::<f64>() / ens.paths() as f64;
    if mean.is_finite() {
        mean
    } else {
        f64::INFINITY
    }
}
