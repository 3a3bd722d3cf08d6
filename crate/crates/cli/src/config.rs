//! Run configuration. TOML is the primary format; JSON is accepted for
//! files ending in `.json`.

use std::path::{Path, PathBuf};

use galerkin_core::coefficients::AssumptionParams;
use galerkin_core::snse::SnseConfig;
use galerkin_core::space::{FamilySpec, FinitelyBasedFunction, SpaceTriple};
use serde::{Deserialize, Serialize};

use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Base seed; every stage derives its own seed from it.
    pub seed: u64,
    /// Leading coordinates of the initial datum; missing ones are zero.
    pub x0: Vec<f64>,
    /// Truncation level; defaults to the model's own dimension or `len(x0)`.
    #[serde(default)]
    pub n: Option<usize>,
    pub model: ModelSpec,
    #[serde(default)]
    pub space: Option<SpaceTriple>,
    pub time: TimeSpec,
    pub particles: ParticleSpec,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    /// Previously written flow container used instead of solving.
    #[serde(default)]
    pub reference_flow: Option<PathBuf>,
    pub family: FamilySpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub residual: ResidualConfig,
    #[serde(default)]
    pub martingale: MartingaleConfig,
    #[serde(default)]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default)]
    pub mkv: Option<MkvConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub stages: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `dY = (offset - rate Y) dt + sigma dW` in every coordinate.
    Ou {
        rate: f64,
        sigma: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `b_i = -rates[i] y_i`, `sigma = diag(sigmas)`.
    Diagonal { rates: Vec<f64>, sigmas: Vec<f64> },
    /// `b_i = -y_i + coupling sum_{i < j <= n} y_j / j^2`, `sigma = sigma I`.
    Coupled { coupling: f64, sigma: f64 },
    /// `b = drift y + offset`, constant `sigma` (rows are coordinates).
    Linear {
        drift: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Vec<f64>,
        sigma: Vec<Vec<f64>>,
    },
    Snse(SnseConfig),
    /// `dX = -(X - a E X) dt + sigma dW`.
    MeanFieldOu { a: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub record_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
    /// Time steps of the grid solver; defaults to `time.steps`.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Defaults to `time.record_every` scaled by `steps / time.steps`.
    #[serde(default)]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_superposition")]
    pub superposition: f64,
    #[serde(default = "default_residual")]
    pub weak_residual: f64,
    #[serde(default = "default_z")]
    pub z_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            superposition: default_superposition(),
            weak_residual: default_residual(),
            z_max: default_z(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NSpec {
    /// `N(v) = |v|_H^p`.
    HPower { p: f64 },
    /// `N(v) = scale |v|_X^2`.
    WeightedSquare { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSpec {
    pub c0: f64,
    pub m0: f64,
    /// `Theta = theta_scale |y|^2`, or `theta_scale |y|_X^2` if `theta_weighted`.
    pub theta_scale: f64,
    #[serde(default)]
    pub theta_weighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_radius_min")]
    pub radius_min: f64,
    #[serde(default = "default_radius_max")]
    pub radius_max: f64,
    #[serde(default)]
    pub n_function: Option<NSpec>,
    #[serde(default)]
    pub params: Option<AssumptionParams>,
    #[serde(default)]
    pub lyapunov: Option<LyapunovSpec>,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            samples: default_samples(),
            radius_min: default_radius_min(),
            radius_max: default_radius_max(),
            n_function: None,
            params: None,
            lyapunov: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_q")]
    pub energy_q: Vec<f64>,
    #[serde(default = "one_u32")]
    pub moment_order: u32,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            energy_q: default_q(),
            moment_order: 1,
        }
    }
}

/// `psi((y^coord - center) / scale)`, coordinates counted from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub coord: usize,
    pub center: f64,
    pub scale: f64,
}

impl BumpSpec {
    pub fn build(&self) -> Result<FinitelyBasedFunction, PipelineError> {
        if self.coord == 0 {
            return Err(PipelineError::config("bump coordinates are counted from 1"));
        }
        Ok(FinitelyBasedFunction::bump(self.coord - 1, self.center, self.scale)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    #[serde(default)]
    pub functions: Vec<BumpSpec>,
    #[serde(default)]
    pub times: Vec<f64>,
    /// Grid flows only: re-solve with halved steps and require every
    /// residual to shrink by at least this factor.
    #[serde(default)]
    pub refinement_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleConfig {
    #[serde(default)]
    pub functions: Vec<BumpSpec>,
    /// `(s, t)` pairs.
    #[serde(default)]
    pub windows: Vec<[f64; 2]>,
    /// Each entry is one conditioner `g(x) = psi(x(s))`; `g = 1` is always included.
    #[serde(default)]
    pub conditioners: Vec<BumpSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceCriterion {
    /// Every cross-level distance is below `3 / sqrt(M)`.
    SamplingNoise,
    /// Distances to the finest level strictly decrease.
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub levels: Vec<usize>,
    pub paths: usize,
    pub family: FamilySpec,
    pub criterion: ConvergenceCriterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MkvConfig {
    pub max_iters: usize,
    pub tol: f64,
    #[serde(default = "yes")]
    pub oracle: bool,
}

fn one() -> usize {
    1
}
fn one_u32() -> u32 {
    1
}
fn yes() -> bool {
    true
}
fn default_superposition() -> f64 {
    2e-2
}
fn default_residual() -> f64 {
    5e-3
}
fn default_z() -> f64 {
    4.0
}
fn default_samples() -> usize {
    500
}
fn default_radius_min() -> f64 {
    1e-2
}
fn default_radius_max() -> f64 {
    1e2
}
fn default_q() -> Vec<f64> {
    vec![1.0, 2.0]
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.time.steps == 0 || self.time.record_every == 0 || !(self.time.horizon > 0.0) {
            return Err(PipelineError::config("time grid needs steps, record_every >= 1 and horizon > 0"));
        }
        if self.particles.paths == 0 {
            return Err(PipelineError::config("particles.paths must be positive"));
        }
        if self.x0.is_empty() && self.n.is_none() {
            return Err(PipelineError::config("x0 is empty and no truncation n is given"));
        }
        if let Some(c) = &self.convergence {
            if c.levels.len() < 2 {
                return Err(PipelineError::config("convergence needs at least two levels"));
            }
        }
        for w in &self.martingale.windows {
            if !(w[0] < w[1]) {
                return Err(PipelineError::config(format!("martingale window {w:?} needs s < t")));
            }
        }
        Ok(())
    }
}
