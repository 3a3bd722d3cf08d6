//! Named model families and the constants that go with them.

use galerkin_core::coefficients::{AssumptionParams, CoefficientModel, LinearSde, LyapunovData, ScalarField};
use galerkin_core::mckean_vlasov::{MeanFieldOu, MeasureDependentCoefficients};
use galerkin_core::snse::{build_snse_coefficients, SnseConfig};
use galerkin_core::space::{NFunction, SpaceTriple};
use nalgebra::DMatrix;

use crate::config::{LyapunovSpec, ModelSpec, NSpec, RunConfig};
use crate::PipelineError;

/// Assumption constants a model derives for itself.
pub struct Derived {
    pub triple: SpaceTriple,
    pub n_function: NFunction,
    pub params: AssumptionParams,
    pub lyapunov: LyapunovData,
}

pub struct BuiltModel {
    pub model: Box<dyn CoefficientModel>,
    pub derived: Option<Derived>,
}

fn snse_config(cfg: &SnseConfig, horizon: f64) -> SnseConfig {
    SnseConfig { horizon, ..cfg.clone() }
}

/// Truncation level of a run.
pub fn dimension(cfg: &RunConfig) -> Result<usize, PipelineError> {
    if let Some(n) = cfg.n {
        return Ok(n);
    }
    Ok(match &cfg.model {
        ModelSpec::Snse(s) => build_snse_coefficients(&snse_config(s, cfg.time.horizon))?.dim(),
        _ => cfg.x0.len(),
    })
}

/// `Pi_n x0`, padding unlisted coordinates with zeros.
pub fn initial_datum(x0: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (o, v) in out.iter_mut().zip(x0) {
        *o = *v;
    }
    out
}

pub fn build_linear(spec: &ModelSpec, n: usize, horizon: f64) -> Result<BuiltModel, PipelineError> {
    let model: Box<dyn CoefficientModel> = match spec {
        ModelSpec::Ou { rate, sigma, offset } => Box::new(LinearSde::ou_with_offset(n, *rate, *offset, *sigma, horizon)?),
        ModelSpec::Diagonal { rates, sigmas } => {
            if rates.len() < n || sigmas.len() < n {
                return Err(PipelineError::config(format!("diagonal model lists fewer than {n} rates or sigmas")));
            }
            Box::new(LinearSde::diagonal(&rates[..n], &sigmas[..n], horizon)?)
        }
        ModelSpec::Coupled { coupling, sigma } => {
            let drift = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
                std::cmp::Ordering::Equal => -1.0,
                std::cmp::Ordering::Less => coupling / ((j + 1) * (j + 1)) as f64,
                std::cmp::Ordering::Greater => 0.0,
            });
            Box::new(LinearSde::new(
                format!("coupled(coupling={coupling},sigma={sigma})"),
                drift,
                vec![0.0; n],
                DMatrix::identity(n, n) * *sigma,
                horizon,
            )?)
        }
        ModelSpec::Linear { drift, offset, sigma } => {
            let rows = |m: &Vec<Vec<f64>>, what: &str| -> Result<DMatrix<f64>, PipelineError> {
                let cols = m.first().map_or(0, Vec::len);
                if m.len() != n || m.iter().any(|r| r.len() != cols) {
                    return Err(PipelineError::config(format!("{what} must have {n} rows of equal length")));
                }
                Ok(DMatrix::from_fn(n, cols, |i, j| m[i][j]))
            };
            let offset = if offset.is_empty() { vec![0.0; n] } else { offset.clone() };
            Box::new(LinearSde::new("linear", rows(drift, "drift")?, offset, rows(sigma, "sigma")?, horizon)?)
        }
        ModelSpec::Snse(s) => {
            let model = build_snse_coefficients(&snse_config(s, horizon))?;
            if model.dim() != n {
                return Err(PipelineError::config(format!("SNSE cutoff gives H_{}, run asks for H_{n}", model.dim())));
            }
            let derived = Derived {
                triple: model.triple(),
                n_function: model.enstrophy(),
                params: model.assumption_params(),
                lyapunov: model.lyapunov(),
            };
            return Ok(BuiltModel {
                model: Box::new(model),
                derived: Some(derived),
            });
        }
        ModelSpec::MeanFieldOu { .. } => {
            return Err(PipelineError::config("mean_field_ou is measure dependent; use the mkv subcommand"));
        }
    };
    Ok(BuiltModel { model, derived: None })
}

pub fn build_nonlinear(
    spec: &ModelSpec,
    n: usize,
    horizon: f64,
) -> Result<Box<dyn MeasureDependentCoefficients>, PipelineError> {
    match spec {
        ModelSpec::MeanFieldOu { a, sigma } => Ok(Box::new(MeanFieldOu::new(n, *a, *sigma, horizon)?)),
        _ => Err(PipelineError::config("the mkv subcommand needs a measure-dependent model")),
    }
}

pub fn n_function(spec: &NSpec, triple: &SpaceTriple) -> NFunction {
    match spec {
        NSpec::HPower { p } => NFunction::h_power(*p),
        NSpec::WeightedSquare { scale } => NFunction::weighted_square(triple, *scale),
    }
}

/// `V = 1 + |y|^2` with the configured `Theta`.
pub fn lyapunov(spec: &LyapunovSpec, triple: &SpaceTriple) -> Result<LyapunovData, PipelineError> {
    let scale = spec.theta_scale;
    let weights = if spec.theta_weighted { Some(triple.weights().to_vec()) } else { None };
    let name = format!("{scale}*|y|_{}^2", if spec.theta_weighted { "X" } else { "H" });
    Ok(LyapunovData::new(
        ScalarField::one_plus_square(),
        name,
        move |y: &[f64]| {
            scale
                * match &weights {
                    Some(w) => y.iter().zip(w).map(|(v, l)| l * v * v).sum::<f64>(),
                    None => y.iter().map(|v| v * v).sum::<f64>(),
                }
        },
        spec.c0,
        spec.m0,
    )?)
}
