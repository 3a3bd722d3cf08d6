//! The nine-step verification pipeline, plus the nonlinear and SNSE runs.
//!
//! Every stage writes one JSON report into the output directory; large
//! artifacts (flows, ensembles) go into GSPC containers and tables into CSV.
//! Wall-clock data is kept out of the reports and lands in `run_meta.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use galerkin_core::coefficients::{
    check_coercivity, check_demicontinuity, check_equicontinuity, check_growth, check_local_growth, check_lyapunov,
    check_symmetry_psd, AssumptionParams, CheckReport, CoefficientModel, LyapunovData, SamplePlan,
};
use galerkin_core::container::{read_ensemble, read_flow, write_ensemble, write_flow};
use galerkin_core::fpke::{
    integrability_guard, narrow_continuity_modulus, solve_fpke_grid, weak_residuals, FlowKind, GridSpec, MarginalFlow,
};
use galerkin_core::martingale::{
    energy_estimate, m1_integrability, martingale_test, simulate_em, write_stats_csv, Conditioner, MartingaleStat,
    PathEnsemble, SimConfig,
};
use galerkin_core::mckean_vlasov::{
    solve_mkv_interacting, solve_mkv_picard, verify_nonlinear_superposition, NonlinearReport, PicardConfig,
};
use galerkin_core::snse::{build_snse_coefficients, snse_energy_check, SnseEnergyReport};
use galerkin_core::space::{FinitelyBasedFunction, NFunction, SpaceTriple};
use galerkin_core::superposition::{
    galerkin_convergence, lyapunov_bound_check, marginal_distance, s2_integrability, verify_superposition,
    ConvergenceTable, LyapunovLedger, OperatorNorm, SuperpositionReport,
};
use serde::{Deserialize, Serialize};

use crate::config::{ConvergenceCriterion, ModelSpec, RunConfig};
use crate::registry::{self, BuiltModel};
use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Project,
    Solve,
    Simulate,
    Diagnostics,
    Converge,
    Residual,
    Martingale,
    Coincide,
    Mass,
    Mkv,
    Snse,
}

impl Stage {
    pub const STEPS: [Stage; 9] = [
        Stage::Project,
        Stage::Solve,
        Stage::Simulate,
        Stage::Diagnostics,
        Stage::Converge,
        Stage::Residual,
        Stage::Martingale,
        Stage::Coincide,
        Stage::Mass,
    ];

    /// Proof step `1..=9`; the nonlinear and SNSE runs have none.
    pub fn step(self) -> Option<u8> {
        Stage::STEPS.iter().position(|s| *s == self).map(|i| i as u8 + 1)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Project => "project",
            Stage::Solve => "solve",
            Stage::Simulate => "simulate",
            Stage::Diagnostics => "diagnostics",
            Stage::Converge => "converge",
            Stage::Residual => "residual",
            Stage::Martingale => "martingale",
            Stage::Coincide => "coincide",
            Stage::Mass => "mass",
            Stage::Mkv => "mkv",
            Stage::Snse => "snse",
        }
    }

    /// Exit code when the stage raises an error.
    pub fn error_code(self) -> i32 {
        match self.step() {
            Some(s) => 10 + s as i32,
            None if self == Stage::Mkv => 30,
            None => 32,
        }
    }

    /// Exit code when the stage runs but one of its checks fails.
    pub fn fail_code(self) -> i32 {
        match self.step() {
            Some(s) => 20 + s as i32,
            None if self == Stage::Mkv => 31,
            None => 33,
        }
    }

    /// Step number, stage name, or a subcommand alias.
    pub fn parse(token: &str) -> Result<Stage, PipelineError> {
        let token = token.trim();
        if let Ok(k) = token.parse::<usize>() {
            return Stage::STEPS
                .get(k.wrapping_sub(1))
                .copied()
                .ok_or_else(|| PipelineError::config(format!("no pipeline step {k}")));
        }
        let all = Stage::STEPS.iter().chain(&[Stage::Mkv, Stage::Snse]);
        if let Some(s) = all.into_iter().find(|s| s.name() == token) {
            return Ok(*s);
        }
        match token {
            "check-assumptions" => Ok(Stage::Project),
            "verify" => Err(PipelineError::config("`verify` covers several stages; list them instead")),
            other => Err(PipelineError::config(format!("unknown stage `{other}`"))),
        }
    }

    fn seed_slot(self) -> u64 {
        match self.step() {
            Some(s) => s as u64,
            None if self == Stage::Mkv => 10,
            None => 11,
        }
    }
}

/// Seed of a stage: the base seed plus `1000 * slot`.
pub fn stage_seed(base: u64, stage: Stage) -> u64 {
    base.wrapping_add(1000 * stage.seed_slot())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
    /// The config does not ask for this step.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub step: Option<u8>,
    pub stage: Stage,
    pub status: Status,
    pub seed: Option<u64>,
    pub report: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub model: String,
    pub n: usize,
    pub seed: u64,
    pub tol_scale: f64,
    pub stages: Vec<StageOutcome>,
    pub verdict: Status,
    pub exit_code: i32,
}

#[derive(Debug, Clone)]
pub struct Options {
    pub out: PathBuf,
    pub stages: Option<Vec<Stage>>,
    pub seed_override: Option<u64>,
    pub tol_scale: f64,
}

impl Options {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Options {
            out: out.into(),
            stages: None,
            seed_override: None,
            tol_scale: 1.0,
        }
    }

    pub fn with_stages(mut self, stages: Vec<Stage>) -> Self {
        self.stages = Some(stages);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectReport {
    pub n: usize,
    pub samples: usize,
    pub checks: Vec<CheckReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub kind: FlowKind,
    pub source: String,
    pub nodes: usize,
    pub horizon: f64,
    pub mollifier_width: f64,
    pub integrability: f64,
    pub s2_integral: f64,
    pub narrow_modulus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub paths: usize,
    pub steps: usize,
    pub record_every: usize,
    pub nodes: usize,
    pub m1_integrability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub q: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_function: String,
    pub energy: Vec<EnergyRow>,
    pub lyapunov: Option<LyapunovLedger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeReport {
    pub criterion: ConvergenceCriterion,
    pub levels: Vec<usize>,
    pub paths: usize,
    pub family_size: usize,
    pub noise_bound: Option<f64>,
    pub max_cross_level: f64,
    pub table: ConvergenceTable,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub f: String,
    pub t: f64,
    pub residual: f64,
    pub refined: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub tol: f64,
    pub ratio_required: Option<f64>,
    pub rows: Vec<ResidualRow>,
    pub max_residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub z_max: f64,
    pub max_abs_z: f64,
    pub stats: Vec<MartingaleStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub times: Vec<f64>,
    pub h_finite_fraction: Vec<f64>,
    pub v_finite_fraction: Vec<f64>,
    pub min_fraction: f64,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?,
    ))
}

#[derive(Debug, Clone, Serialize)]
struct RunMeta {
    version: &'static str,
    started_unix: u64,
    threads: usize,
    stage_seconds: Vec<(String, f64)>,
}

/// Shared state of one pipeline run.
struct Context<'c> {
    cfg: &'c RunConfig,
    opts: &'c Options,
    seed: u64,
    n: usize,
    x0: Vec<f64>,
    built: BuiltModel,
    triple: SpaceTriple,
    flow: Option<MarginalFlow>,
    ens: Option<PathEnsemble>,
}

impl<'c> Context<'c> {
    fn model(&self) -> &dyn CoefficientModel {
        self.built.model.as_ref()
    }

    fn path(&self, file: &str) -> PathBuf {
        self.opts.out.join(file)
    }

    fn sim_config(&self, stage: Stage, paths: usize) -> SimConfig {
        SimConfig::new(self.cfg.time.steps, paths, stage_seed(self.seed, stage)).with_record_every(self.cfg.time.record_every)
    }

    fn n_function(&self) -> Option<NFunction> {
        match (&self.cfg.checks.n_function, &self.built.derived) {
            (Some(spec), _) => Some(registry::n_function(spec, &self.triple)),
            (None, Some(d)) => Some(d.n_function.clone()),
            _ => None,
        }
    }

    fn params(&self) -> Option<AssumptionParams> {
        match (&self.cfg.checks.params, &self.built.derived) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(d)) => Some(d.params.clone()),
            _ => None,
        }
    }

    fn lyapunov(&self) -> Result<Option<LyapunovData>, PipelineError> {
        Ok(match (&self.cfg.checks.lyapunov, &self.built.derived) {
            (Some(spec), _) => Some(registry::lyapunov(spec, &self.triple)?),
            (None, Some(d)) => Some(d.lyapunov.clone()),
            _ => None,
        })
    }

    fn flow(&mut self) -> Result<&MarginalFlow, PipelineError> {
        if self.flow.is_none() {
            let path = self.path("flow.gspc");
            if !path.exists() {
                return Err(PipelineError::config("no flow available: run the solve stage first"));
            }
            self.flow = Some(read_flow(open(&path)?)?);
        }
        Ok(self.flow.as_ref().expect("loaded above"))
    }

    fn ensemble(&mut self) -> Result<&PathEnsemble, PipelineError> {
        if self.ens.is_none() {
            let path = self.path("ensemble.gspc");
            if !path.exists() {
                return Err(PipelineError::config("no ensemble available: run the simulate stage first"));
            }
            self.ens = Some(read_ensemble(open(&path)?)?);
        }
        Ok(self.ens.as_ref().expect("loaded above"))
    }

    fn grid_spec(&self) -> Option<GridSpec> {
        let g = self.cfg.grid.as_ref()?;
        let steps = g.steps.unwrap_or(self.cfg.time.steps);
        let record = g
            .record_every
            .unwrap_or_else(|| (self.cfg.time.record_every * steps / self.cfg.time.steps).max(1));
        Some(GridSpec::cube(self.n, g.lo, g.hi, g.cells, steps).with_record_every(record))
    }

    fn plan(&self, stage: Stage) -> SamplePlan {
        let c = &self.cfg.checks;
        SamplePlan::new(stage_seed(self.seed, stage), c.samples).with_radii(c.radius_min, c.radius_max)
    }

    fn run(&mut self, stage: Stage) -> Result<(Status, Option<String>), PipelineError> {
        let file = format!("step{}_{}.json", stage.step().unwrap_or(0), stage.name());
        let passed = match stage {
            Stage::Project => {
                let r = self.project()?;
                write_json(&self.path(&file), &r)?;
                r.checks.iter().all(CheckReport::passed)
            }
            Stage::Solve => {
                let r = self.solve()?;
                write_json(&self.path(&file), &r)?;
                r.integrability.is_finite() && r.s2_integral.is_finite()
            }
            Stage::Simulate => {
                let r = self.simulate()?;
                write_json(&self.path(&file), &r)?;
                r.m1_integrability.is_finite()
            }
            Stage::Diagnostics => {
                let r = self.diagnostics()?;
                write_json(&self.path(&file), &r)?;
                r.energy.iter().all(|e| e.estimate.is_finite())
                    && r.lyapunov.as_ref().map_or(true, |l| l.verdict == galerkin_core::coefficients::Verdict::Pass)
            }
            Stage::Converge => match self.converge()? {
                Some(r) => {
                    write_json(&self.path(&file), &r)?;
                    r.table.write_csv(create(&self.path("convergence.csv"))?)?;
                    r.passed
                }
                None => return Ok((Status::Skipped, None)),
            },
            Stage::Residual => {
                let r = self.residual()?;
                write_json(&self.path(&file), &r)?;
                r.passed
            }
            Stage::Martingale => {
                let r = self.martingale()?;
                write_json(&self.path(&file), &r)?;
                write_stats_csv(create(&self.path("martingale.csv"))?, &r.stats)?;
                r.max_abs_z <= r.z_max
            }
            Stage::Coincide => {
                let r = self.coincide()?;
                write_json(&self.path(&file), &r)?;
                r.verdict == galerkin_core::coefficients::Verdict::Pass
            }
            Stage::Mass => {
                let r = self.mass()?;
                write_json(&self.path(&file), &r)?;
                r.min_fraction == 1.0
            }
            Stage::Mkv | Stage::Snse => return Err(PipelineError::config("not a linear pipeline stage")),
        };
        Ok((if passed { Status::Pass } else { Status::Fail }, Some(file)))
    }

    fn project(&self) -> Result<ProjectReport, PipelineError> {
        let model = self.model();
        let plan = self.plan(Stage::Project);
        let mut checks = vec![check_symmetry_psd(model, &plan)];
        if let (Some(nf), Some(params)) = (self.n_function(), self.params()) {
            checks.push(check_coercivity(model, &nf, &params, &plan));
            checks.push(check_growth(model, &nf, &params, &self.triple, &plan));
        }
        if let Some(lyap) = self.lyapunov()? {
            checks.push(check_lyapunov(model, &lyap, &plan));
            if let Some(params) = self.params().filter(|p| !p.envelopes.is_empty()) {
                checks.push(check_local_growth(model, &lyap, &params, &plan));
            }
        }
        checks.push(check_demicontinuity(model, &plan));
        checks.push(check_equicontinuity(model, &plan));
        Ok(ProjectReport {
            n: self.n,
            samples: plan.samples,
            checks,
        })
    }

    fn solve(&mut self) -> Result<SolveReport, PipelineError> {
        let (flow, source) = if let Some(path) = &self.cfg.reference_flow {
            (read_flow(open(path)?)?, format!("file:{}", path.display()))
        } else if let Some(spec) = self.grid_spec().filter(|_| self.n <= 2) {
            (solve_fpke_grid(self.model(), &self.x0, &spec)?, "grid".to_string())
        } else {
            let cfg = self.sim_config(Stage::Solve, self.cfg.particles.paths);
            (simulate_em(self.model(), &self.x0, &cfg)?.to_flow()?, "particle".to_string())
        };
        if flow.dim() != self.n {
            return Err(PipelineError::config(format!("flow on H_{} for a run on H_{}", flow.dim(), self.n)));
        }
        let family = self.cfg.family.build();
        let report = SolveReport {
            kind: flow.kind(),
            source,
            nodes: flow.times().len(),
            horizon: flow.horizon(),
            mollifier_width: flow.mollifier_width,
            integrability: integrability_guard(&flow, self.model())?,
            s2_integral: s2_integrability(&flow, self.model(), OperatorNorm::Spectral)?,
            narrow_modulus: narrow_continuity_modulus(&flow, &family),
        };
        write_flow(create(&self.path("flow.gspc"))?, &flow)?;
        self.flow = Some(flow);
        Ok(report)
    }

    fn simulate(&mut self) -> Result<SimulateReport, PipelineError> {
        let cfg = self.sim_config(Stage::Simulate, self.cfg.particles.paths);
        let ens = simulate_em(self.model(), &self.x0, &cfg)?;
        let report = SimulateReport {
            paths: ens.paths(),
            steps: ens.steps(),
            record_every: cfg.record_every,
            nodes: ens.times().len(),
            m1_integrability: m1_integrability(&ens, self.model())?,
        };
        write_ensemble(create(&self.path("ensemble.gspc"))?, &ens)?;
        self.ens = Some(ens);
        Ok(report)
    }

    fn diagnostics(&mut self) -> Result<DiagnosticsReport, PipelineError> {
        let nf = self.n_function().unwrap_or_else(|| NFunction::h_power(2.0));
        let lyap = self.lyapunov()?;
        let order = self.cfg.diagnostics.moment_order;
        let qs = self.cfg.diagnostics.energy_q.clone();
        let x0 = self.x0.clone();
        let ens = self.ensemble()?;
        let energy = qs
            .iter()
            .map(|&q| EnergyRow {
                q,
                estimate: energy_estimate(ens, q, &nf),
            })
            .collect();
        let lyapunov = match lyap {
            Some(l) => Some(lyapunov_bound_check(self.flow()?, &l, order, &x0)?),
            None => None,
        };
        Ok(DiagnosticsReport {
            n_function: nf.name().to_string(),
            energy,
            lyapunov,
        })
    }

    fn converge(&self) -> Result<Option<ConvergeReport>, PipelineError> {
        let Some(conv) = &self.cfg.convergence else {
            return Ok(None);
        };
        let family = conv.family.build();
        let cfg = self.sim_config(Stage::Converge, conv.paths);
        let flows = conv
            .levels
            .iter()
            .map(|&n| {
                let built = registry::build_linear(&self.cfg.model, n, self.cfg.time.horizon)?;
                let x0 = registry::initial_datum(&self.cfg.x0, n);
                Ok((n, simulate_em(built.model.as_ref(), &x0, &cfg)?.to_flow()?))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let times = flows[0].1.times().to_vec();
        let table = galerkin_convergence(&flows, &family, &times)?;
        let max_cross_level = table.rows.iter().map(|r| r.distance).fold(0.0, f64::max);
        let (noise_bound, passed) = match conv.criterion {
            ConvergenceCriterion::SamplingNoise => {
                let bound = self.opts.tol_scale * 3.0 / (conv.paths as f64).sqrt();
                (Some(bound), max_cross_level <= bound)
            }
            ConvergenceCriterion::Decreasing => (None, table.decreasing),
        };
        Ok(Some(ConvergeReport {
            criterion: conv.criterion,
            levels: conv.levels.clone(),
            paths: conv.paths,
            family_size: family.len(),
            noise_bound,
            max_cross_level,
            table,
            passed,
        }))
    }

    fn test_functions(&self, specs: &[crate::config::BumpSpec]) -> Result<Vec<FinitelyBasedFunction>, PipelineError> {
        if specs.is_empty() {
            return Ok(self.cfg.family.build().into_iter().filter(|f| f.base_dim() <= self.n).take(5).collect());
        }
        specs.iter().map(|s| s.build()).collect()
    }

    fn residual(&mut self) -> Result<ResidualReport, PipelineError> {
        let fs = self.test_functions(&self.cfg.residual.functions)?;
        let tol = self.opts.tol_scale * self.cfg.tolerances.weak_residual;
        let ratio_required = self.cfg.residual.refinement_ratio;
        let refined_spec = match (ratio_required, self.grid_spec()) {
            (Some(_), Some(spec)) if self.n <= 2 && self.cfg.reference_flow.is_none() => Some(spec.refined(2)),
            (Some(_), _) => return Err(PipelineError::config("residual refinement needs a grid flow")),
            _ => None,
        };
        self.flow()?;
        let flow = self.flow.as_ref().expect("loaded above");
        let model = self.built.model.as_ref();
        let times = if self.cfg.residual.times.is_empty() {
            vec![flow.horizon()]
        } else {
            self.cfg.residual.times.clone()
        };
        let refined = match refined_spec {
            Some(spec) => Some(solve_fpke_grid(model, &self.x0, &spec)?),
            None => None,
        };
        let mut rows = Vec::new();
        for f in &fs {
            let coarse = weak_residuals(flow, f, model, &times)?;
            let fine = match &refined {
                Some(r) => Some(weak_residuals(r, f, model, &times)?),
                None => None,
            };
            for (k, &t) in times.iter().enumerate() {
                let fine_k = fine.as_ref().map(|v| v[k]);
                rows.push(ResidualRow {
                    f: f.label().to_string(),
                    t,
                    residual: coarse[k],
                    refined: fine_k,
                    ratio: fine_k.map(|v| coarse[k] / v),
                });
            }
        }
        let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
        let ratios_ok = match ratio_required {
            Some(req) => rows.iter().all(|r| r.ratio.is_some_and(|q| q >= req)),
            None => true,
        };
        Ok(ResidualReport {
            tol,
            ratio_required,
            passed: max_residual <= tol && ratios_ok,
            rows,
            max_residual,
        })
    }

    fn martingale(&mut self) -> Result<MartingaleReport, PipelineError> {
        let fs = self.test_functions(&self.cfg.martingale.functions)?;
        let conds = self
            .cfg
            .martingale
            .conditioners
            .iter()
            .map(|c| c.build())
            .collect::<Result<Vec<_>, _>>()?;
        let z_max = self.opts.tol_scale * self.cfg.tolerances.z_max;
        let windows = if self.cfg.martingale.windows.is_empty() {
            vec![[0.5 * self.cfg.time.horizon, self.cfg.time.horizon]]
        } else {
            self.cfg.martingale.windows.clone()
        };
        let ens = self.ens.take().map_or_else(|| self.ensemble().cloned(), Ok)?;
        let model = self.built.model.as_ref();
        let mut stats = Vec::new();
        for f in &fs {
            for &[s, t] in &windows {
                let mut g = vec![Conditioner::one()];
                for c in &conds {
                    g.push(Conditioner::new(vec![(s, c.clone())])?);
                }
                stats.extend(martingale_test(&ens, f, model, s, t, &g)?);
            }
        }
        self.ens = Some(ens);
        let max_abs_z = stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max);
        Ok(MartingaleReport { z_max, max_abs_z, stats })
    }

    fn coincide(&mut self) -> Result<SuperpositionReport, PipelineError> {
        let family: Vec<_> = self.cfg.family.build().into_iter().filter(|f| f.base_dim() <= self.n).collect();
        let tol = self.opts.tol_scale * self.cfg.tolerances.superposition;
        self.flow()?;
        self.ensemble()?;
        let (flow, ens) = (self.flow.as_ref().expect("loaded"), self.ens.as_ref().expect("loaded"));
        Ok(verify_superposition(flow, ens, &family, tol)?)
    }

    fn mass(&mut self) -> Result<MassReport, PipelineError> {
        let lyap = self.lyapunov()?;
        let ens = self.ensemble()?;
        let (n, m) = (ens.dim(), ens.paths() as f64);
        let mut h_frac = Vec::new();
        let mut v_frac = Vec::new();
        for k in 0..ens.times().len() {
            let node = ens.node(k);
            let h = node.chunks_exact(n).filter(|y| y.iter().map(|v| v * v).sum::<f64>().is_finite()).count();
            let v = node
                .chunks_exact(n)
                .filter(|y| match &lyap {
                    Some(l) => l.v.value(y).is_finite(),
                    None => (1.0 + y.iter().map(|v| v * v).sum::<f64>()).is_finite(),
                })
                .count();
            h_frac.push(h as f64 / m);
            v_frac.push(v as f64 / m);
        }
        let min_fraction = h_frac.iter().chain(&v_frac).copied().fold(1.0, f64::min);
        Ok(MassReport {
            times: ens.times().to_vec(),
            h_finite_fraction: h_frac,
            v_finite_fraction: v_frac,
            min_fraction,
        })
    }
}

fn model_label(spec: &ModelSpec) -> &'static str {
    match spec {
        ModelSpec::Ou { .. } => "ou",
        ModelSpec::Diagonal { .. } => "diagonal",
        ModelSpec::Coupled { .. } => "coupled",
        ModelSpec::Linear { .. } => "linear",
        ModelSpec::Snse(_) => "snse",
        ModelSpec::MeanFieldOu { .. } => "mean_field_ou",
    }
}

fn requested(cfg: &RunConfig, opts: &Options) -> Result<Vec<Stage>, PipelineError> {
    let mut stages = match (&opts.stages, &cfg.stages) {
        (Some(s), _) => s.clone(),
        (None, Some(names)) => names.iter().map(|s| Stage::parse(s)).collect::<Result<_, _>>()?,
        (None, None) => Stage::STEPS.to_vec(),
    };
    stages.sort();
    stages.dedup();
    if stages.iter().any(|s| s.step().is_none()) {
        return Err(PipelineError::config("mkv and snse run through their own subcommands"));
    }
    Ok(stages)
}

fn write_meta(out: &Path, started: u64, stage_seconds: Vec<(String, f64)>) -> Result<(), PipelineError> {
    write_json(
        &out.join("run_meta.json"),
        &RunMeta {
            version: env!("CARGO_PKG_VERSION"),
            started_unix: started,
            threads: rayon_threads(),
            stage_seconds,
        },
    )
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs the requested steps in order. Check failures are recorded and the
/// run continues; an error halts it. The summary is always written.
pub fn run_pipeline(cfg: &RunConfig, opts: &Options) -> Result<Summary, PipelineError> {
    cfg.validate()?;
    let started = unix_now();
    std::fs::create_dir_all(&opts.out).map_err(|e| PipelineError::Io(format!("{}: {e}", opts.out.display())))?;
    let stages = requested(cfg, opts)?;
    let seed = opts.seed_override.unwrap_or(cfg.seed);
    let n = registry::dimension(cfg)?;
    let built = registry::build_linear(&cfg.model, n, cfg.time.horizon)?;
    let triple = match (&cfg.space, &built.derived) {
        (Some(t), _) => t.clone(),
        (None, Some(d)) => d.triple.clone(),
        (None, None) => SpaceTriple::flat(n)?,
    };
    let mut ctx = Context {
        cfg,
        opts,
        seed,
        n,
        x0: registry::initial_datum(&cfg.x0, n),
        built,
        triple,
        flow: None,
        ens: None,
    };
    let mut outcomes = Vec::new();
    let mut timings = Vec::new();
    let mut exit_code = 0;
    for stage in stages {
        let clock = Instant::now();
        let result = ctx.run(stage);
        timings.push((stage.name().to_string(), clock.elapsed().as_secs_f64()));
        let seed = Some(stage_seed(seed, stage));
        match result {
            Ok((status, report)) => {
                if status == Status::Fail && exit_code == 0 {
                    exit_code = stage.fail_code();
                }
                outcomes.push(StageOutcome {
                    step: stage.step(),
                    stage,
                    status,
                    seed,
                    report,
                    error: None,
                });
            }
            Err(e) => {
                exit_code = stage.error_code();
                outcomes.push(StageOutcome {
                    step: stage.step(),
                    stage,
                    status: Status::Error,
                    seed,
                    report: None,
                    error: Some(e.to_string()),
                });
                break;
            }
        }
    }
    let verdict = match exit_code {
        0 => Status::Pass,
        c if outcomes.iter().any(|o| o.status == Status::Error && o.stage.error_code() == c) => Status::Error,
        _ => Status::Fail,
    };
    let summary = Summary {
        name: cfg.name.clone(),
        model: model_label(&cfg.model).to_string(),
        n,
        seed,
        tol_scale: opts.tol_scale,
        stages: outcomes,
        verdict,
        exit_code,
    };
    write_json(&opts.out.join("summary.json"), &summary)?;
    write_meta(&opts.out, started, timings)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardTraceRow {
    pub iterate: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MkvReport {
    pub model: String,
    pub n: usize,
    pub seed: u64,
    pub oracle_seed: Option<u64>,
    pub paths: usize,
    pub steps: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    pub final_mean: Vec<f64>,
    pub final_mean_se: Vec<f64>,
    pub oracle_distance: Option<f64>,
    pub oracle_bound: Option<f64>,
    pub nonlinear: NonlinearReport,
    pub passed: bool,
}

fn mean_and_se(points: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (points.len() / n) as f64;
    (0..n)
        .map(|i| {
            let mean = points.chunks_exact(n).map(|y| y[i]).sum::<f64>() / m;
            let var = points.chunks_exact(n).map(|y| (y[i] - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            (mean, (var / m).sqrt())
        })
        .unzip()
}

/// Picard iteration on the mean-field model, the nonlinear superposition
/// check on its fixed point, and optionally the interacting-particle oracle.
pub fn run_mkv(cfg: &RunConfig, opts: &Options) -> Result<(MkvReport, i32), PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out).map_err(|e| PipelineError::Io(format!("{}: {e}", opts.out.display())))?;
    let mkv = cfg.mkv.as_ref().ok_or_else(|| PipelineError::config("missing [mkv] section"))?;
    let n = registry::dimension(cfg)?;
    let model = registry::build_nonlinear(&cfg.model, n, cfg.time.horizon)?;
    let x0 = registry::initial_datum(&cfg.x0, n);
    let base = opts.seed_override.unwrap_or(cfg.seed);
    let seed = stage_seed(base, Stage::Mkv);
    let family: Vec<_> = cfg.family.build().into_iter().filter(|f| f.base_dim() <= n).collect();
    let sim = SimConfig::new(cfg.time.steps, cfg.particles.paths, seed).with_record_every(cfg.time.record_every);
    let picard = PicardConfig {
        max_iters: mkv.max_iters,
        tol: opts.tol_scale * mkv.tol,
        family: family.clone(),
    };
    let out = solve_mkv_picard(model.as_ref(), &x0, &sim, &picard).map_err(PipelineError::from)?;
    let nonlinear = verify_nonlinear_superposition(
        model.as_ref(),
        &out.flow,
        &out.ensemble,
        &family,
        opts.tol_scale * cfg.tolerances.superposition,
    )?;
    let last = out.ensemble.times().len() - 1;
    let (final_mean, final_mean_se) = mean_and_se(out.ensemble.node(last), n);
    let (oracle_seed, oracle_distance, oracle_bound) = if mkv.oracle {
        let oseed = seed.wrapping_add(1);
        let (flow, _) = solve_mkv_interacting(model.as_ref(), &x0, &sim.clone().with_seed(oseed))?;
        let d = out
            .flow
            .times()
            .iter()
            .map(|&t| marginal_distance(out.flow.at(t)?, flow.at(t)?, &family))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let bound = opts.tol_scale * 6.0 / (cfg.particles.paths as f64).sqrt();
        (Some(oseed), Some(d), Some(bound))
    } else {
        (None, None, None)
    };
    let oracle_ok = match (oracle_distance, oracle_bound) {
        (Some(d), Some(b)) => d <= b,
        _ => true,
    };
    let passed = out.converged && nonlinear.verdict == galerkin_core::coefficients::Verdict::Pass && oracle_ok;
    let mut w = csv::Writer::from_writer(create(&opts.out.join("picard_trace.csv"))?);
    for (i, d) in out.trace.iter().enumerate() {
        w.serialize(PicardTraceRow {
            iterate: i + 1,
            distance: *d,
        })
        .map_err(|e| PipelineError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| PipelineError::Io(e.to_string()))?;
    let report = MkvReport {
        model: model.name().to_string(),
        n,
        seed,
        oracle_seed,
        paths: cfg.particles.paths,
        steps: cfg.time.steps,
        tol: picard.tol,
        max_iters: mkv.max_iters,
        iterations: out.iterations,
        converged: out.converged,
        trace: out.trace,
        final_mean,
        final_mean_se,
        oracle_distance,
        oracle_bound,
        nonlinear,
        passed,
    };
    write_json(&opts.out.join("mkv.json"), &report)?;
    Ok((report, if passed { 0 } else { Stage::Mkv.fail_code() }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnseReport {
    pub n: usize,
    pub triads: usize,
    pub seed: u64,
    pub noise_trace: f64,
    pub params: AssumptionParams,
    pub checks: Vec<CheckReport>,
    pub max_cancellation: f64,
    pub energy: SnseEnergyReport,
    pub s2_integral: f64,
    pub passed: bool,
}

/// Build, check, simulate and verify an SNSE truncation in one report.
pub fn run_snse(cfg: &RunConfig, opts: &Options) -> Result<(SnseReport, i32), PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out).map_err(|e| PipelineError::Io(format!("{}: {e}", opts.out.display())))?;
    let ModelSpec::Snse(snse) = &cfg.model else {
        return Err(PipelineError::config("snse-demo needs an snse model"));
    };
    let model = build_snse_coefficients(&galerkin_core::snse::SnseConfig {
        horizon: cfg.time.horizon,
        ..snse.clone()
    })?;
    let n = model.dim();
    let base = opts.seed_override.unwrap_or(cfg.seed);
    let seed = stage_seed(base, Stage::Snse);
    let c = &cfg.checks;
    let plan = SamplePlan::new(seed, c.samples).with_radii(c.radius_min, c.radius_max);
    let params = c.params.clone().unwrap_or_else(|| model.assumption_params());
    let nf = model.enstrophy();
    let checks = vec![
        check_symmetry_psd(&model, &plan),
        check_coercivity(&model, &nf, &params, &plan),
        check_growth(&model, &nf, &params, &model.triple(), &plan),
        check_lyapunov(&model, &model.lyapunov(), &plan),
    ];
    let max_cancellation = plan
        .draws(n, model.horizon())
        .iter()
        .map(|(_, y)| {
            let b = model.convection(y);
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let pairing: f64 = b.iter().zip(y).map(|(p, q)| p * q).sum();
            if norm > 0.0 {
                pairing.abs() / norm.powi(3)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let x0 = registry::initial_datum(&cfg.x0, n);
    let sim = SimConfig::new(cfg.time.steps, cfg.particles.paths, seed).with_record_every(cfg.time.record_every);
    let ens = simulate_em(&model, &x0, &sim)?;
    let energy = snse_energy_check(&ens, &model)?;
    let s2_integral = s2_integrability(&ens.to_flow()?, &model, OperatorNorm::Spectral)?;
    let passed = checks.iter().all(CheckReport::passed)
        && max_cancellation <= 1e-12
        && energy.verdict == galerkin_core::coefficients::Verdict::Pass
        && s2_integral.is_finite();
    let report = SnseReport {
        n,
        triads: model.triad_count(),
        seed,
        noise_trace: model.noise_trace(),
        params,
        checks,
        max_cancellation,
        energy,
        s2_integral,
        passed,
    };
    write_json(&opts.out.join("snse.json"), &report)?;
    Ok((report, if passed { 0 } else { Stage::Snse.fail_code() }))
}
