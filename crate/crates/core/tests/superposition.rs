use galerkin_core::coefficients::{LinearSde, LyapunovData, ScalarField, Verdict};
use galerkin_core::fpke::{solve_fpke_grid, EmpiricalMeasure, FlowKind, GridSpec, MarginalFlow, Measure};
use galerkin_core::martingale::{simulate_em, SimConfig};
use galerkin_core::reference::{gauss_hermite, OuLaw};
use galerkin_core::space::separating_family;
use galerkin_core::superposition::{
    galerkin_convergence, lyapunov_bound_check, s2_integrability, verify_superposition, OperatorNorm,
};
use galerkin_core::Error;

/// Gauss-Hermite discretisation of the exact OU marginals.
fn closed_form_flow(law: OuLaw, steps: usize) -> MarginalFlow {
    let (x, w) = gauss_hermite(20);
    let norm: f64 = w.iter().sum();
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    let nodes = times
        .iter()
        .map(|&t| {
            let (m, s) = (law.mean(t), (2.0 * law.variance(t)).sqrt());
            let pts = x.iter().map(|xi| m + s * xi).collect();
            Measure::Empirical(EmpiricalMeasure::weighted(1, pts, w.iter().map(|v| v / norm).collect()).unwrap())
        })
        .collect();
    MarginalFlow::new(FlowKind::Particle, vec![law.x0], times, nodes).unwrap()
}

fn quadratic_lyapunov() -> LyapunovData {
    LyapunovData::new(ScalarField::one_plus_square(), "2|y|^2", |y: &[f64]| 2.0 * y[0] * y[0], 2.0, 4.0).unwrap()
}

#[test]
fn grid_and_particle_flows_coincide() {
    let model = LinearSde::ou(1, 1.0, 1.0, 1.0).unwrap();
    let flow = solve_fpke_grid(&model, &[0.5], &GridSpec::cube(1, -5.0, 5.0, 500, 400).with_record_every(40)).unwrap();
    let ens = simulate_em(&model, &[0.5], &SimConfig::new(400, 20_000, 2).with_record_every(40)).unwrap();
    let report = verify_superposition(&flow, &ens, &separating_family(1, 8), 2e-2).unwrap();
    assert_eq!(report.verdict, Verdict::Pass, "{report:?}");
    assert_eq!(report.times.len(), 11);

    let offset = LinearSde::ou_with_offset(1, 1.0, 1.0, 1.0, 1.0).unwrap();
    let shifted = simulate_em(&offset, &[0.5], &SimConfig::new(400, 20_000, 2).with_record_every(40)).unwrap();
    let report = verify_superposition(&flow, &shifted, &separating_family(1, 8), 2e-2).unwrap();
    assert_eq!(report.verdict, Verdict::Fail);

    let misaligned = simulate_em(&model, &[0.5], &SimConfig::new(300, 100, 2).with_record_every(7)).unwrap();
    assert!(matches!(
        verify_superposition(&flow, &misaligned, &separating_family(1, 8), 2e-2),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn lyapunov_ledger_holds_for_ou_and_fails_for_an_unstable_law() {
    let stable = closed_form_flow(OuLaw::new(1.0, std::f64::consts::SQRT_2, 1.0), 100);
    let ledger = lyapunov_bound_check(&stable, &quadratic_lyapunov(), 1, &[1.0]).unwrap();
    assert_eq!((ledger.m_k, ledger.n_k), (2.0, 2.0 * 2f64.exp() + 1.0));
    assert_eq!(ledger.w_k, 2.0);
    assert_eq!(ledger.verdict, Verdict::Pass);
    // E Y_t^2 = 1 for all t, so lhs(t) = 2 + 2t
    for (t, v) in ledger.times.iter().zip(&ledger.lhs) {
        assert!((v - (2.0 + 2.0 * t)).abs() < 1e-10, "lhs {v} at {t}");
    }

    let unstable = closed_form_flow(OuLaw::new(-3.0, std::f64::consts::SQRT_2, 1.0), 100);
    let ledger = lyapunov_bound_check(&unstable, &quadratic_lyapunov(), 1, &[1.0]).unwrap();
    assert_eq!(ledger.verdict, Verdict::Fail);
}

#[test]
fn s2_integral_of_constant_noise_is_explicit() {
    // b = 0 and A = I/2: the integrand |A| / (1 + |y|)^2 reduces to E[1/(2(1+|y|)^2)]
    let model = LinearSde::diagonal(&[0.0], &[1.0], 1.0).unwrap();
    let x0 = 0.0;
    let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let nodes: Vec<Measure> = times.iter().map(|_| Measure::Empirical(EmpiricalMeasure::dirac(&[x0]).unwrap())).collect();
    let flow = MarginalFlow::new(FlowKind::Particle, vec![x0], times, nodes).unwrap();
    let s2 = s2_integrability(&flow, &model, OperatorNorm::Spectral).unwrap();
    assert!((s2 - 0.5).abs() < 1e-12, "{s2}");
}

#[test]
fn convergence_table_is_zero_on_identical_levels() {
    let model = LinearSde::ou(2, 1.0, 1.0, 1.0).unwrap();
    let flow = simulate_em(&model, &[1.0, 0.0], &SimConfig::new(20, 200, 1).with_record_every(10)).unwrap().to_flow().unwrap();
    let table = galerkin_convergence(&[(2, flow.clone()), (3, flow.clone())], &separating_family(2, 2), flow.times()).unwrap();
    assert!(table.rows.iter().all(|r| r.distance == 0.0));
    assert_eq!(table.to_finest, vec![(2, 0.0)]);
    assert!(galerkin_convergence(&[(2, flow.clone())], &separating_family(1, 2), flow.times()).is_err());
}
