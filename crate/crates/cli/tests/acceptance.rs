//! One line per acceptance criterion; exits nonzero if any fails.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use galerkin_cli::config::ConvergenceCriterion;
use galerkin_cli::pipeline::{ConvergeReport, MartingaleReport, ResidualReport};
use galerkin_cli::{run_mkv, run_pipeline, run_snse, Options, RunConfig, Stage, Status};
use galerkin_core::coefficients::{CoefficientModel, LinearSde, LyapunovData, ScalarField, Verdict};
use galerkin_core::container::read_ensemble;
use galerkin_core::fpke::{solve_fpke_grid, EmpiricalMeasure, FlowKind, GridSpec, MarginalFlow, Measure};
use galerkin_core::martingale::{energy_estimate, martingale_test, simulate_em, Conditioner, SimConfig};
use galerkin_core::reference::{gauss_hermite, grid_ks_statistic, ks_critical_95, ks_statistic, OuLaw};
use galerkin_core::snse::{build_snse_coefficients, snse_energy_check, SnseConfig};
use galerkin_core::space::{separating_family, FinitelyBasedFunction, NFunction};
use galerkin_core::superposition::{lyapunov_bound_check, verify_superposition};

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::from_path(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_reader(BufReader::new(File::open(&path).expect("report exists"))).expect("valid report")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1() -> Outcome {
    let clock = Instant::now();
    let model = LinearSde::ou(1, 1.0, SQRT2, 1.0).unwrap();
    let flow = solve_fpke_grid(&model, &[1.0], &GridSpec::cube(1, -6.0, 6.0, 1200, 1000).with_record_every(10)).unwrap();
    let ens = simulate_em(&model, &[1.0], &SimConfig::new(1000, 100_000, 1).with_record_every(10)).unwrap();
    let report = verify_superposition(&flow, &ens, &separating_family(1, 8), 2e-2).unwrap();
    let elapsed = clock.elapsed().as_secs_f64();
    let law = OuLaw::new(1.0, SQRT2, 1.0);
    let crit = ks_critical_95(100_000);
    let (mut ks_em, mut ks_grid) = (0.0f64, 0.0f64);
    for t in [0.1, 0.25, 0.5, 0.75, 1.0] {
        ks_em = ks_em.max(ks_statistic(ens.marginal(t).unwrap().points(), |x| law.cdf(t, x)));
        let grid = flow.at(t).unwrap().as_grid().unwrap();
        ks_grid = ks_grid.max(grid_ks_statistic(grid, |x| law.cdf(t, x)).unwrap());
    }
    outcome(
        report.sup_distance <= 2e-2 && ks_em <= crit && ks_grid <= crit && elapsed < 60.0,
        format!(
            "sup distance {:.3e} <= 2e-2, KS em {ks_em:.3e} grid {ks_grid:.3e} <= {crit:.3e}, {elapsed:.1} s < 60 s",
            report.sup_distance
        ),
    )
}

fn criterion_2(run: &Path) -> Outcome {
    let r: ResidualReport = read_json(run.join("step6_residual.json"));
    let min_ratio = r.rows.iter().filter_map(|row| row.ratio).fold(f64::INFINITY, f64::min);
    let ok = r.rows.len() == 15
        && r.rows.iter().all(|row| row.residual <= 5e-3 && row.ratio.is_some_and(|q| q >= 1.5));
    outcome(
        ok,
        format!("{} residuals, max {:.3e} <= 5e-3, min refinement ratio {min_ratio:.2} >= 1.5", r.rows.len(), r.max_residual),
    )
}

fn criterion_3(run: &Path) -> Outcome {
    let r: MartingaleReport = read_json(run.join("step7_martingale.json"));
    let ens = read_ensemble(BufReader::new(File::open(run.join("ensemble.gspc")).unwrap())).unwrap();
    let corrupted = LinearSde::ou_with_offset(1, 1.0, 0.5, SQRT2, 1.0).unwrap();
    let mut corrupted_z = 0.0f64;
    for c in [-0.5, 0.0, 0.5, 1.0, 1.5] {
        let f = FinitelyBasedFunction::bump(0, c, 1.0).unwrap();
        for (s, t) in [(0.25, 0.5), (0.5, 1.0)] {
            let g = [
                Conditioner::one(),
                Conditioner::new(vec![(s, FinitelyBasedFunction::bump(0, 0.5, 1.0).unwrap())]).unwrap(),
            ];
            for stat in martingale_test(&ens, &f, &corrupted, s, t, &g).unwrap() {
                corrupted_z = corrupted_z.max(stat.z.abs());
            }
        }
    }
    outcome(
        r.stats.len() == 20 && r.max_abs_z <= 4.0 && corrupted_z > 6.0,
        format!(
            "{} combos, max |z| {:.2} <= 4, corrupted drift max |z| {corrupted_z:.1} > 6",
            r.stats.len(),
            r.max_abs_z
        ),
    )
}

fn criterion_4() -> Outcome {
    let law = OuLaw::new(1.0, SQRT2, 1.0);
    let (x, w) = gauss_hermite(20);
    let norm: f64 = w.iter().sum();
    let times: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let nodes = times
        .iter()
        .map(|&t| {
            let (m, s) = (law.mean(t), (2.0 * law.variance(t)).sqrt());
            let points = x.iter().map(|xi| m + s * xi).collect();
            Measure::Empirical(EmpiricalMeasure::weighted(1, points, w.iter().map(|v| v / norm).collect()).unwrap())
        })
        .collect();
    let flow = MarginalFlow::new(FlowKind::Particle, vec![1.0], times, nodes).unwrap();
    let lyap = LyapunovData::new(ScalarField::one_plus_square(), "2|y|^2", |y: &[f64]| 2.0 * y[0] * y[0], 2.0, 4.0).unwrap();
    let ledger = lyapunov_bound_check(&flow, &lyap, 1, &[1.0]).unwrap();
    let n1 = 2.0 * 2f64.exp() + 1.0;
    let max_lhs = ledger.lhs.iter().copied().fold(0.0, f64::max);
    outcome(
        ledger.m_k == 2.0 && ledger.n_k == n1 && max_lhs <= ledger.rhs && ledger.v_finite_fraction == 1.0,
        format!(
            "M1 = {}, N1 = {} (2e^2+1), max lhs {max_lhs:.4} <= N1 W1 = {:.4}, V-finite fraction {}",
            ledger.m_k, ledger.n_k, ledger.rhs, ledger.v_finite_fraction
        ),
    )
}

fn criterion_5() -> Outcome {
    let model = LinearSde::ou(1, 1.0, SQRT2, 1.0).unwrap();
    let nf = NFunction::h_power(2.0);
    let small = simulate_em(&model, &[1.0], &SimConfig::new(1000, 100_000, 4).with_record_every(10)).unwrap();
    let large = simulate_em(&model, &[1.0], &SimConfig::new(1000, 200_000, 4).with_record_every(10)).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for q in [1.0, 2.0] {
        let (a, b) = (energy_estimate(&small, q, &nf), energy_estimate(&large, q, &nf));
        let rel = (b - a).abs() / a.abs();
        ok &= a.is_finite() && b.is_finite() && rel < 0.05;
        parts.push(format!("q={q}: {a:.4} -> {b:.4} ({:.2}% < 5%)", 100.0 * rel));
    }
    outcome(ok, parts.join(", "))
}

fn criterion_6(scratch: &Path) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["galerkin_diagonal", "galerkin_coupled"] {
        let cfg = config(&format!("{name}.toml"));
        let out = scratch.join(name);
        let summary = run_pipeline(&cfg, &Options::new(&out).with_stages(vec![Stage::Converge])).unwrap();
        let r: ConvergeReport = read_json(out.join("step5_converge.json"));
        ok &= summary.verdict == Status::Pass && r.passed;
        match r.criterion {
            ConvergenceCriterion::SamplingNoise => {
                let bound = 3.0 / (r.paths as f64).sqrt();
                ok &= r.levels == [2, 4, 8] && r.max_cross_level <= bound;
                parts.push(format!("diagonal max cross-level {:.3e} <= 3/sqrt(M) = {bound:.3e}", r.max_cross_level));
            }
            ConvergenceCriterion::Decreasing => {
                let d: Vec<f64> = r.table.to_finest.iter().map(|(_, d)| *d).collect();
                ok &= r.levels == [2, 4, 8, 16] && d.windows(2).all(|w| w[1] < w[0]);
                parts.push(format!("coupled distance to n=16: {}", d.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" > ")));
            }
        }
    }
    outcome(ok, parts.join("; "))
}

fn criterion_7(scratch: &Path) -> Outcome {
    let cfg = config("mean_field_ou.toml");
    let (r, _) = run_mkv(&cfg, &Options::new(scratch.join("mkv"))).unwrap();
    let target = (-0.5f64).exp();
    let z = (r.final_mean[0] - target) / r.final_mean_se[0];
    let bound = 2.0 * 3.0 / (r.paths as f64).sqrt();
    let distance = r.oracle_distance.unwrap_or(f64::INFINITY);
    outcome(
        r.converged && r.iterations <= 10 && z.abs() <= 3.0 && distance <= bound,
        format!(
            "converged in {} iterations <= 10, mean z {z:.2} within 3 SE of e^(-1/2), Picard vs interacting {distance:.3e} <= {bound:.3e}",
            r.iterations
        ),
    )
}

fn criterion_8(scratch: &Path) -> Outcome {
    let cfg = config("snse.toml");
    let (r, _) = run_snse(&cfg, &Options::new(scratch.join("snse"))).unwrap();
    let checks_ok = r.checks.iter().all(|c| c.passed());
    let noise = build_snse_coefficients(&SnseConfig {
        drift: false,
        ..SnseConfig::default()
    })
    .unwrap();
    let mut x0 = vec![0.0; noise.dim()];
    x0[..4].copy_from_slice(&cfg.x0[..4]);
    let ens = simulate_em(&noise, &x0, &SimConfig::new(100, 20_000, 17).with_record_every(10)).unwrap();
    let energy = snse_energy_check(&ens, &noise).unwrap();
    outcome(
        r.checks.len() >= 4
            && r.max_cancellation <= 1e-12
            && checks_ok
            && energy.noise_only
            && energy.verdict == Verdict::Pass
            && r.s2_integral.is_finite(),
        format!(
            "H_{}, max |<B(u,u),u>|/|u|^3 {:.1e} <= 1e-12, {} checkers pass: {checks_ok}, noise-only max |z| {:.2} <= 3, s2 {:.4}",
            r.n,
            r.max_cancellation,
            r.checks.len(),
            energy.max_abs_z,
            r.s2_integral
        ),
    )
}

fn criterion_9(first: &Path, second: &Path) -> Outcome {
    let cfg = config("ou.toml");
    run_pipeline(&cfg, &Options::new(second)).unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(first).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        let name = name.to_string_lossy().into_owned();
        if name == "run_meta.json" {
            continue;
        }
        compared += 1;
        if std::fs::read(first.join(&name)).unwrap() != std::fs::read(second.join(&name)).unwrap_or_default() {
            differing.push(name);
        }
    }
    outcome(
        compared > 0 && differing.is_empty(),
        format!("{compared} reports and artifacts compared byte for byte, differing: {differing:?}"),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; only a bare run executes.
    if std::env::args().skip(1).any(|a| a == "--list") {
        return;
    }
    let scratch = tempfile::tempdir().unwrap();
    let ou_run = scratch.path().join("ou");
    let summary = run_pipeline(&config("ou.toml"), &Options::new(&ou_run)).unwrap();
    println!("ou pipeline: {:?}, exit code {}", summary.verdict, summary.exit_code);

    let criteria: Vec<(u8, Box<dyn Fn() -> Outcome>)> = vec![
        (1, Box::new(criterion_1)),
        (2, Box::new(|| criterion_2(&ou_run))),
        (3, Box::new(|| criterion_3(&ou_run))),
        (4, Box::new(criterion_4)),
        (5, Box::new(criterion_5)),
        (6, Box::new(|| criterion_6(scratch.path()))),
        (7, Box::new(|| criterion_7(scratch.path()))),
        (8, Box::new(|| criterion_8(scratch.path()))),
        (9, Box::new(|| criterion_9(&ou_run, &scratch.path().join("ou_rerun")))),
    ];
    let mut failed = 0;
    for (k, check) in criteria {
        let o = check();
        println!("criterion {k}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of 9 criteria pass", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
