use serde::{Deserialize, Serialize};

use crate::coefficients::{half_outer, CoefficientModel};
use crate::error::{Error, Result};
use crate::space::apply_l_raw;
use crate::space::FinitelyBasedFunction;

/// Finitely supported probability measure on `H_n`; points are stored
/// contiguously (`len * n` values).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    n: usize,
    points: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    /// Equally weighted atoms.
    pub fn uniform(n: usize, points: Vec<f64>) -> Result<Self> {
        if n == 0 || points.is_empty() || points.len() % n != 0 {
            return Err(Error::Dimension(format!("{} coordinates for points in H_{n}", points.len())));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite atom".into()));
        }
        Ok(EmpiricalMeasure { n, points, weights: None })
    }

    pub fn weighted(n: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::uniform(n, points)?;
        if weights.len() != m.len() {
            return Err(Error::Dimension(format!("{} weights for {} atoms", weights.len(), m.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}")));
        }
        m.weights = Some(weights);
        Ok(m)
    }

    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::uniform(x.len(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    /// `sum_i w_i g(x_i)`, accumulated in atom order.
    pub fn integrate<G: Fn(&[f64]) -> f64>(&self, g: G) -> f64 {
        match &self.weights {
            None => self.points.chunks_exact(self.n).map(&g).sum::<f64>() / self.len() as f64,
            Some(w) => self.points.chunks_exact(self.n).zip(w).map(|(x, w)| w * g(x)).sum(),
        }
    }
}

/// Uniform axis with `cells` cells on `[lo, lo + cells * h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub h: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(hi > lo && lo.is_finite() && hi.is_finite()) || cells < 5 {
            return Err(Error::InvalidParameter(format!("axis [{lo}, {hi}] with {cells} cells")));
        }
        Ok(Axis {
            lo,
            h: (hi - lo) / cells as f64,
            cells,
        })
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.h
    }

    /// Right interface of cell `i`.
    pub fn face(&self, i: usize) -> f64 {
        self.lo + (i + 1) as f64 * self.h
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.cells as f64 * self.h
    }
}

/// Cell-averaged density on a uniform grid in one or two dimensions.
/// Values are row-major with the first axis slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    axes: Vec<Axis>,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Unsupported(format!("grid densities in {} dimensions", axes.len())));
        }
        let size: usize = axes.iter().map(|a| a.cells).product();
        if values.len() != size {
            return Err(Error::Dimension(format!("{} values for {size} cells", values.len())));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("density must be finite and nonnegative".into()));
        }
        Ok(GridDensity { axes, values })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.h).product()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Midpoint quadrature `sum_cells g(center) rho vol`.
    pub fn integrate<G: Fn(&[f64]) -> f64>(&self, g: G) -> f64 {
        let vol = self.cell_volume();
        let mut y = vec![0.0; self.dim()];
        let mut acc = 0.0;
        for (idx, rho) in self.values.iter().enumerate() {
            if *rho == 0.0 {
                continue;
            }
            self.center_into(idx, &mut y);
            acc += g(&y) * rho;
        }
        acc * vol
    }

    pub fn center_into(&self, idx: usize, y: &mut [f64]) {
        match self.axes.as_slice() {
            [a] => y[0] = a.center(idx),
            [a, b] => {
                y[0] = a.center(idx / b.cells);
                y[1] = b.center(idx % b.cells);
            }
            _ => unreachable!("grid dimension checked at construction"),
        }
    }
}

/// A node of a marginal flow.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Empirical(EmpiricalMeasure),
    Grid(GridDensity),
}

impl Measure {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Empirical(m) => m.dim(),
            Measure::Grid(g) => g.dim(),
        }
    }

    pub fn integrate<G: Fn(&[f64]) -> f64>(&self, g: G) -> f64 {
        match self {
            Measure::Empirical(m) => m.integrate(g),
            Measure::Grid(d) => d.integrate(g),
        }
    }

    pub fn integrate_fn(&self, f: &FinitelyBasedFunction) -> f64 {
        self.integrate(|y| f.value(y))
    }

    /// `int Lf(t, .) d mu`.
    pub fn integrate_generator(&self, model: &dyn CoefficientModel, f: &FinitelyBasedFunction, t: f64) -> f64 {
        let (n, m, d) = (self.dim(), model.noise_dim(), f.base_dim());
        let mut b = vec![0.0; n];
        let mut s = vec![0.0; n * m];
        let mut a = vec![0.0; n * n];
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        let fixed_sigma = model.state_independent_diffusion();
        if fixed_sigma {
            model.sigma_into(t, &vec![0.0; n], &mut s);
            half_outer(&s, n, m, &mut a);
        }
        let mut acc = 0.0;
        self.for_each(|y, w| {
            model.drift_into(t, y, &mut b);
            if !fixed_sigma {
                model.sigma_into(t, y, &mut s);
                half_outer(&s, n, m, &mut a);
            }
            acc += w * apply_l_raw(f, y, &a, &b, &mut g, &mut h);
        });
        acc
    }

    /// Visit every atom / cell center with positive mass `w`.
    pub fn for_each<F: FnMut(&[f64], f64)>(&self, mut visit: F) {
        match self {
            Measure::Empirical(e) => {
                for i in 0..e.len() {
                    let w = e.weight(i);
                    if w > 0.0 {
                        visit(e.point(i), w);
                    }
                }
            }
            Measure::Grid(grid) => {
                let vol = grid.cell_volume();
                let mut y = vec![0.0; grid.dim()];
                for (idx, rho) in grid.values().iter().enumerate() {
                    if *rho > 0.0 {
                        grid.center_into(idx, &mut y);
                        visit(&y, rho * vol);
                    }
                }
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.integrate(|y| y[i])).collect()
    }

    pub fn as_empirical(&self) -> Option<&EmpiricalMeasure> {
        match self {
            Measure::Empirical(m) => Some(m),
            Measure::Grid(_) => None,
        }
    }

    pub fn as_grid(&self) -> Option<&GridDensity> {
        match self {
            Measure::Grid(g) => Some(g),
            Measure::Empirical(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Grid,
    Particle,
}

/// Candidate solution `(mu_t)` of the projected Cauchy problem, stored at
/// the nodes of a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalFlow {
    kind: FlowKind,
    x0: Vec<f64>,
    times: Vec<f64>,
    nodes: Vec<Measure>,
    /// Standard deviation of the mollifier applied to the initial Dirac
    /// (zero for particle flows).
    pub mollifier_width: f64,
}

impl MarginalFlow {
    /// `x0` is the projected initial datum `Pi_n x0`.
    pub fn new(kind: FlowKind, x0: Vec<f64>, times: Vec<f64>, nodes: Vec<Measure>) -> Result<Self> {
        if times.is_empty() || times.len() != nodes.len() {
            return Err(Error::GridMismatch(format!("{} times for {} measures", times.len(), nodes.len())));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMismatch("time grid must be strictly increasing".into()));
        }
        let n = x0.len();
        if nodes.iter().any(|m| m.dim() != n) {
            return Err(Error::Dimension(format!("flow nodes must all live on H_{n}")));
        }
        Ok(MarginalFlow {
            kind,
            x0,
            times,
            nodes,
            mollifier_width: 0.0,
        })
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[Measure] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &Measure {
        &self.nodes[k]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("flows are nonempty")
    }

    /// Index of the grid node equal to `t` (up to `1e-9` relative).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        node_index(&self.times, t)
    }

    pub fn at(&self, t: f64) -> Result<&Measure> {
        Ok(&self.nodes[self.index_of(t)?])
    }

    /// Node nearest to `t`; ties go to the earlier node.
    pub fn nearest(&self, t: f64) -> Result<&Measure> {
        let (lo, hi) = (self.times[0], self.horizon());
        let slack = 1e-9 * (1.0 + hi.abs());
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::TimeOutOfRange { t, lower: lo, upper: hi });
        }
        let k = self.times.partition_point(|&s| s < t);
        let k = if k == 0 {
            0
        } else if k == self.times.len() || t - self.times[k - 1] <= self.times[k] - t {
            k - 1
        } else {
            k
        };
        Ok(&self.nodes[k])
    }

    /// `t -> int f d mu_t` at every node.
    pub fn integrals(&self, f: &FinitelyBasedFunction) -> Vec<f64> {
        self.nodes.iter().map(|m| m.integrate_fn(f)).collect()
    }
}

pub(crate) fn node_index(times: &[f64], t: f64) -> Result<usize> {
    let scale = 1.0 + times.last().map_or(0.0, |v| v.abs());
    let k = times.partition_point(|&s| s < t - 1e-9 * scale);
    if k < times.len() && (times[k] - t).abs() <= 1e-9 * scale {
        Ok(k)
    } else {
        Err(Error::OffGrid(t))
    }
}
