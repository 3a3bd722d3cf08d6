//! Finite-volume oracle for the projected FPKE in one or two dimensions.
//!
//! Fluxes use upwinded drift at cell faces and diffusion in divergence form
//! `d_x (a rho)`; each step is backward Euler, so every 1-D solve is a
//! tridiagonal M-matrix with unit column sums. The Thomas sweep on such a
//! matrix only adds nonnegative terms, hence positivity and mass
//! conservation hold without clipping. Two dimensions use Strang splitting
//! (half x, full y, half x) and require `a^{12} = 0`.

use serde::{Deserialize, Serialize};

use super::measure::{Axis, FlowKind, GridDensity, MarginalFlow, Measure};
use crate::coefficients::{half_outer, CoefficientModel};
use crate::error::{Error, Result};

/// Discretization parameters of [`solve_fpke_grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `(lo, hi, cells)` per dimension.
    pub axes: Vec<(f64, f64, usize)>,
    pub steps: usize,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default = "default_courant")]
    pub courant_max: f64,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    /// Standard deviation of the initial Gaussian, in cells.
    #[serde(default = "default_mollifier")]
    pub mollifier_cells: f64,
}

fn one() -> usize {
    1
}

fn default_courant() -> f64 {
    1.0
}

fn default_boundary_tol() -> f64 {
    1e-8
}

fn default_mollifier() -> f64 {
    2.0
}

impl GridSpec {
    pub fn new(axes: Vec<(f64, f64, usize)>, steps: usize) -> Self {
        GridSpec {
            axes,
            steps,
            record_every: 1,
            courant_max: default_courant(),
            boundary_tol: default_boundary_tol(),
            mollifier_cells: default_mollifier(),
        }
    }

    /// Same box on every one of `n` axes.
    pub fn cube(n: usize, lo: f64, hi: f64, cells: usize, steps: usize) -> Self {
        Self::new(vec![(lo, hi, cells); n], steps)
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    /// Grid and time step both refined by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let mut g = self.clone();
        g.axes.iter_mut().for_each(|a| a.2 *= factor);
        g.steps *= factor;
        g.record_every *= factor;
        g
    }
}

/// Tridiagonal system of one implicit sweep along a line of cells.
struct Line {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    cp: Vec<f64>,
    rho: Vec<f64>,
    face_b: Vec<f64>,
    cell_a: Vec<f64>,
}

impl Line {
    fn new(cells: usize) -> Self {
        Line {
            lower: vec![0.0; cells],
            diag: vec![0.0; cells],
            upper: vec![0.0; cells],
            cp: vec![0.0; cells],
            rho: vec![0.0; cells],
            face_b: vec![0.0; cells],
            cell_a: vec![0.0; cells],
        }
    }

    /// Backward-Euler step of length `dt` with face drifts `face_b[i]`
    /// (face between `i` and `i+1`) and cell diffusions `cell_a[i]`.
    fn solve(&mut self, h: f64, dt: f64) {
        let cells = self.rho.len();
        let r = dt / h;
        let flux = |i: usize| -> (f64, f64) {
            if i + 1 >= cells {
                return (0.0, 0.0);
            }
            let b = self.face_b[i];
            (b.max(0.0) + self.cell_a[i] / h, (-b).max(0.0) + self.cell_a[i + 1] / h)
        };
        let mut prev = (0.0, 0.0);
        for i in 0..cells {
            let (alpha, beta) = flux(i);
            self.lower[i] = -r * prev.0;
            self.diag[i] = 1.0 + r * (alpha + prev.1);
            self.upper[i] = -r * beta;
            prev = (alpha, beta);
        }
        // Thomas sweep; with lower, upper <= 0 every update is a sum of
        // nonnegative terms
        let mut denom = self.diag[0];
        self.cp[0] = self.upper[0] / denom;
        self.rho[0] /= denom;
        for i in 1..cells {
            denom = self.diag[i] - self.lower[i] * self.cp[i - 1];
            self.cp[i] = self.upper[i] / denom;
            self.rho[i] = (self.rho[i] - self.lower[i] * self.rho[i - 1]) / denom;
        }
        for i in (0..cells - 1).rev() {
            self.rho[i] -= self.cp[i] * self.rho[i + 1];
        }
    }
}

struct Solver<'a> {
    model: &'a dyn CoefficientModel,
    axes: Vec<Axis>,
    courant_max: f64,
    b: Vec<f64>,
    s: Vec<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
}

impl Solver<'_> {
    fn coefficients(&mut self, t: f64) {
        let (n, m) = (self.axes.len(), self.model.noise_dim());
        self.model.drift_into(t, &self.y, &mut self.b);
        self.model.sigma_into(t, &self.y, &mut self.s);
        half_outer(&self.s, n, m, &mut self.a);
    }

    /// Fill `line` with face drifts and cell diffusions along `axis`, the
    /// other coordinate fixed at `other`.
    fn load(&mut self, line: &mut Line, axis: usize, other: Option<f64>, t: f64) -> Result<()> {
        let n = self.axes.len();
        let ax = self.axes[axis];
        if let Some(o) = other {
            self.y[1 - axis] = o;
        }
        for i in 0..ax.cells {
            self.y[axis] = ax.center(i);
            self.coefficients(t);
            line.cell_a[i] = self.a[axis * n + axis];
            if n == 2 && self.a[1].abs() > 1e-14 {
                return Err(Error::Unsupported(format!(
                    "grid solver needs a^12 = 0, got {} at t = {t}",
                    self.a[1]
                )));
            }
            self.y[axis] = ax.face(i);
            self.coefficients(t);
            line.face_b[i] = self.b[axis];
        }
        if line.cell_a.iter().chain(&line.face_b).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("{}: non-finite coefficients at t = {t}", self.model.name())));
        }
        Ok(())
    }

    fn sweep(&mut self, rho: &mut [f64], axis: usize, t: f64, dt: f64) -> Result<()> {
        let axes = self.axes.clone();
        let cells = axes[axis].cells;
        let mut line = Line::new(cells);
        match axes.len() {
            1 => {
                self.load(&mut line, 0, None, t)?;
                line.rho.copy_from_slice(rho);
                self.courant(&line, axes[0].h, dt)?;
                line.solve(axes[0].h, dt);
                rho.copy_from_slice(&line.rho);
            }
            _ => {
                let other = axes[1 - axis];
                let stride = if axis == 0 { axes[1].cells } else { 1 };
                let jump = if axis == 0 { 1 } else { axes[1].cells };
                for j in 0..other.cells {
                    self.load(&mut line, axis, Some(other.center(j)), t)?;
                    self.courant(&line, axes[axis].h, dt)?;
                    for i in 0..cells {
                        line.rho[i] = rho[j * jump + i * stride];
                    }
                    line.solve(axes[axis].h, dt);
                    for i in 0..cells {
                        rho[j * jump + i * stride] = line.rho[i];
                    }
                }
            }
        }
        Ok(())
    }

    fn courant(&self, line: &Line, h: f64, dt: f64) -> Result<()> {
        let bmax = line.face_b.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        let courant = dt * bmax / h;
        if courant > self.courant_max {
            return Err(Error::StepSize {
                courant,
                limit: self.courant_max,
            });
        }
        Ok(())
    }
}

/// Mass in the two outermost cells on each side of every axis.
fn boundary_mass(axes: &[Axis], rho: &[f64]) -> f64 {
    let vol: f64 = axes.iter().map(|a| a.h).product();
    let edge = |i: usize, cells: usize| i < 2 || i + 2 >= cells;
    let total: f64 = match axes {
        [a] => rho.iter().enumerate().filter(|(i, _)| edge(*i, a.cells)).map(|(_, r)| r).sum(),
        [a, b] => rho
            .iter()
            .enumerate()
            .filter(|(idx, _)| edge(idx / b.cells, a.cells) || edge(idx % b.cells, b.cells))
            .map(|(_, r)| r)
            .sum(),
        _ => 0.0,
    };
    total * vol
}

/// Gaussian of standard deviation `width[i]` per axis centered at `x0`,
/// normalized to unit discrete mass.
fn mollified_dirac(axes: &[Axis], x0: &[f64], cells_width: f64) -> Vec<f64> {
    let profile = |ax: &Axis, c: f64| -> Vec<f64> {
        let w = cells_width * ax.h;
        (0..ax.cells)
            .map(|i| {
                let z = (ax.center(i) - c) / w;
                (-0.5 * z * z).exp()
            })
            .collect()
    };
    let mut rho = match axes {
        [a] => profile(a, x0[0]),
        [a, b] => {
            let (pa, pb) = (profile(a, x0[0]), profile(b, x0[1]));
            pa.iter().flat_map(|u| pb.iter().map(move |v| u * v)).collect()
        }
        _ => unreachable!("dimension checked by the caller"),
    };
    let vol: f64 = axes.iter().map(|a| a.h).product();
    let mass: f64 = rho.iter().sum::<f64>() * vol;
    rho.iter_mut().for_each(|r| *r /= mass);
    rho
}

/// Solve `d_t mu = L* mu`, `mu_0 = delta_{Pi_n x0}` (mollified) on a box.
///
/// Errors with `DomainTooSmall` once the two outermost cell layers carry
/// more than `boundary_tol` mass and with `StepSize` when
/// `dt max|b| / h > courant_max`.
pub fn solve_fpke_grid(model: &dyn CoefficientModel, x0: &[f64], spec: &GridSpec) -> Result<MarginalFlow> {
    let n = model.dim();
    if !(1..=2).contains(&n) {
        return Err(Error::Unsupported(format!("grid solver on H_{n} (only n = 1, 2)")));
    }
    if spec.axes.len() != n {
        return Err(Error::Dimension(format!("{} axes for a model on H_{n}", spec.axes.len())));
    }
    if x0.len() < n {
        return Err(Error::Dimension(format!("initial datum of length {} on H_{n}", x0.len())));
    }
    if spec.steps == 0 || spec.record_every == 0 || !(spec.mollifier_cells > 0.0) {
        return Err(Error::InvalidParameter("steps, record_every and mollifier width must be positive".into()));
    }
    let axes = spec.axes.iter().map(|&(lo, hi, c)| Axis::new(lo, hi, c)).collect::<Result<Vec<_>>>()?;
    let x0 = x0[..n].to_vec();
    let horizon = model.horizon();
    let dt = horizon / spec.steps as f64;
    let mut rho = mollified_dirac(&axes, &x0, spec.mollifier_cells);

    let check_boundary = |rho: &[f64], t: f64| -> Result<()> {
        let mass = boundary_mass(&axes, rho);
        if mass > spec.boundary_tol {
            return Err(Error::DomainTooSmall {
                mass,
                limit: spec.boundary_tol,
                t,
            });
        }
        Ok(())
    };
    check_boundary(&rho, 0.0)?;

    let mut solver = Solver {
        model,
        axes: axes.clone(),
        courant_max: spec.courant_max,
        b: vec![0.0; n],
        s: vec![0.0; n * model.noise_dim()],
        a: vec![0.0; n * n],
        y: vec![0.0; n],
    };
    let mut times = vec![0.0];
    let mut nodes = vec![Measure::Grid(GridDensity::new(axes.clone(), rho.clone())?)];
    for k in 1..=spec.steps {
        let t = horizon * k as f64 / spec.steps as f64;
        if n == 1 {
            solver.sweep(&mut rho, 0, t, dt)?;
        } else {
            solver.sweep(&mut rho, 0, t, 0.5 * dt)?;
            solver.sweep(&mut rho, 1, t, dt)?;
            solver.sweep(&mut rho, 0, t, 0.5 * dt)?;
        }
        check_boundary(&rho, t)?;
        if k % spec.record_every == 0 || k == spec.steps {
            times.push(t);
            nodes.push(Measure::Grid(GridDensity::new(axes.clone(), rho.clone())?));
        }
    }
    let mut flow = MarginalFlow::new(FlowKind::Grid, x0, times, nodes)?;
    flow.mollifier_width = spec.mollifier_cells * axes.iter().map(|a| a.h).fold(0.0, f64::max);
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{ClosureModel, LinearSde};
    use crate::reference::OuLaw;

    fn mass(flow: &MarginalFlow, k: usize) -> f64 {
        flow.node(k).as_grid().unwrap().mass()
    }

    #[test]
    fn static_model_keeps_the_mollified_dirac() {
        let model = LinearSde::zero(1, 1.0);
        let flow = solve_fpke_grid(&model, &[0.3], &GridSpec::cube(1, -2.0, 2.0, 200, 20)).unwrap();
        let first = flow.node(0).as_grid().unwrap().values().to_vec();
        for node in flow.nodes() {
            let v = node.as_grid().unwrap().values();
            let diff = v.iter().zip(&first).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn ou_marginal_in_l1() {
        let model = LinearSde::ou(1, 1.0, 2f64.sqrt(), 1.0).unwrap();
        let spec = GridSpec::cube(1, -6.0, 6.0, 600, 500).with_record_every(100);
        let flow = solve_fpke_grid(&model, &[1.0], &spec).unwrap();
        let law = OuLaw::new(1.0, 2f64.sqrt(), 1.0);
        for (k, &t) in flow.times().iter().enumerate().skip(1) {
            let g = flow.node(k).as_grid().unwrap();
            let ax = g.axes()[0];
            let l1: f64 = g
                .values()
                .iter()
                .enumerate()
                .map(|(i, r)| (r - law.density(t, ax.center(i))).abs() * ax.h)
                .sum();
            assert!(l1 < 2e-2, "t = {t}: L1 = {l1}");
            assert!((mass(&flow, k) - 1.0).abs() < 1e-6);
            assert!(g.values().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn pure_transport_moves_the_mean() {
        let model = LinearSde::new(
            "transport",
            nalgebra::DMatrix::zeros(1, 1),
            vec![1.0],
            nalgebra::DMatrix::zeros(1, 1),
            1.0,
        )
        .unwrap();
        let spec = GridSpec::cube(1, -2.0, 3.0, 500, 200).with_record_every(50);
        let flow = solve_fpke_grid(&model, &[0.0], &spec).unwrap();
        for (k, &t) in flow.times().iter().enumerate() {
            let m = flow.node(k).mean()[0];
            assert!((m - t).abs() <= 0.01, "t = {t}: mean {m}");
        }
    }

    #[test]
    fn two_dimensional_ou_means_within_a_cell() {
        let model = LinearSde::diagonal(&[1.0, 2.0], &[1.0, 0.5], 1.0).unwrap();
        let spec = GridSpec::cube(2, -5.0, 5.0, 100, 200).with_record_every(100);
        let flow = solve_fpke_grid(&model, &[1.0, -0.5], &spec).unwrap();
        let h = 0.1;
        let m = flow.node(2).mean();
        assert!((m[0] - (-1f64).exp()).abs() < h, "{m:?}");
        assert!((m[1] + 0.5 * (-2f64).exp()).abs() < h, "{m:?}");
        assert!((mass(&flow, 2) - 1.0).abs() < 1e-6);
        assert!(flow.node(2).as_grid().unwrap().values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn guards() {
        let model = LinearSde::ou(1, 1.0, 2f64.sqrt(), 1.0).unwrap();
        let small = GridSpec::cube(1, -1.0, 1.0, 100, 100);
        assert!(matches!(solve_fpke_grid(&model, &[0.5], &small), Err(Error::DomainTooSmall { .. })));
        let coarse_time = GridSpec::cube(1, -6.0, 6.0, 1200, 10);
        assert!(matches!(solve_fpke_grid(&model, &[1.0], &coarse_time), Err(Error::StepSize { .. })));
        let coupled = ClosureModel::new(
            "coupled",
            2,
            1,
            1.0,
            |_, y, b| b.iter_mut().zip(y).for_each(|(o, v)| *o = -v),
            |_, _, s| s.fill(1.0),
        );
        let spec = GridSpec::cube(2, -4.0, 4.0, 40, 10);
        assert!(matches!(solve_fpke_grid(&coupled, &[0.0, 0.0], &spec), Err(Error::Unsupported(_))));
        let three = LinearSde::zero(3, 1.0);
        assert!(solve_fpke_grid(&three, &[0.0; 3], &GridSpec::cube(3, -1.0, 1.0, 10, 1)).is_err());
    }
}
