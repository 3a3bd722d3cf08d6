use galerkin_core::coefficients::LinearSde;
use galerkin_core::martingale::{simulate_em, SimConfig};
use galerkin_core::mckean_vlasov::{solve_mkv_interacting, solve_mkv_picard, MeanFieldOu, PicardConfig};
use galerkin_core::space::separating_family;

fn picard(max_iters: usize, tol: f64) -> PicardConfig {
    PicardConfig {
        max_iters,
        tol,
        family: separating_family(1, 8),
    }
}

#[test]
fn no_interaction_reduces_to_the_linear_equation() {
    let model = MeanFieldOu::new(1, 0.0, 1.0, 1.0).unwrap();
    let cfg = SimConfig::new(50, 2000, 3).with_record_every(10);
    let out = solve_mkv_picard(&model, &[1.0], &cfg, &picard(5, 1e-3)).unwrap();
    assert!(out.converged);
    assert_eq!((out.iterations, out.trace.as_slice()), (1, &[0.0][..]));
    let linear = simulate_em(&LinearSde::ou(1, 1.0, 1.0, 1.0).unwrap(), &[1.0], &cfg).unwrap();
    for (a, b) in out.ensemble.raw_states().iter().zip(linear.raw_states()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn picard_mean_follows_the_closed_form() {
    let model = MeanFieldOu::new(1, 0.5, 1.0, 1.0).unwrap();
    let cfg = SimConfig::new(100, 20_000, 5).with_record_every(25);
    let out = solve_mkv_picard(&model, &[1.0], &cfg, &picard(10, 2e-2)).unwrap();
    assert!(out.converged && out.iterations <= 10, "{:?}", out.trace);
    for (k, &t) in out.ensemble.times().iter().enumerate().skip(1) {
        let x = out.ensemble.node(k);
        let m = x.len() as f64;
        let mean = x.iter().sum::<f64>() / m;
        let se = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt();
        assert!((mean - model.mean(1.0, t)).abs() <= 4.0 * se + 2e-3, "t = {t}: {mean} vs {}", model.mean(1.0, t));
    }
}

#[test]
fn non_convergence_is_reported_with_its_trace() {
    let model = MeanFieldOu::new(1, 0.5, 1.0, 1.0).unwrap();
    let cfg = SimConfig::new(20, 500, 5).with_record_every(5);
    let out = solve_mkv_picard(&model, &[1.0], &cfg, &picard(1, 1e-12)).unwrap();
    assert!(!out.converged);
    assert_eq!(out.trace.len(), 1);
    assert!(solve_mkv_picard(&model, &[1.0], &cfg, &picard(3, 0.0)).is_err());
}

#[test]
fn interacting_particles_are_deterministic_per_seed() {
    let model = MeanFieldOu::new(1, 0.5, 1.0, 1.0).unwrap();
    let cfg = SimConfig::new(20, 300, 8).with_record_every(10);
    let (_, a) = solve_mkv_interacting(&model, &[1.0], &cfg).unwrap();
    let (_, b) = solve_mkv_interacting(&model, &[1.0], &cfg).unwrap();
    assert_eq!(a.raw_states(), b.raw_states());
    assert_eq!(a.times(), &[0.0, 0.5, 1.0]);
}
