use galerkin_core::coefficients::{ClosureModel, LinearSde};
use galerkin_core::martingale::{energy_estimate, martingale_test, simulate_em, Conditioner, SimConfig};
use galerkin_core::reference::OuLaw;
use galerkin_core::space::{FinitelyBasedFunction, NFunction};
use galerkin_core::Error;
use proptest::prelude::*;

fn ou() -> LinearSde {
    LinearSde::ou(1, 1.0, std::f64::consts::SQRT_2, 1.0).unwrap()
}

#[test]
fn em_moments_match_the_closed_form() {
    let ens = simulate_em(&ou(), &[1.0], &SimConfig::new(500, 50_000, 9).with_record_every(100)).unwrap();
    let law = OuLaw::new(1.0, std::f64::consts::SQRT_2, 1.0);
    for (k, &t) in ens.times().iter().enumerate().skip(1) {
        let x = ens.node(k);
        let m = x.len() as f64;
        let mean = x.iter().sum::<f64>() / m;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let se_mean = (var / m).sqrt();
        let se_var = var * (2.0 / (m - 1.0)).sqrt();
        assert!((mean - law.mean(t)).abs() < 4.0 * se_mean + 1e-3, "mean at {t}");
        // Euler bias in the variance is O(dt)
        assert!((var - law.variance(t)).abs() < 4.0 * se_var + 5e-3, "var at {t}: {var}");
    }
}

#[test]
fn ensembles_are_reproducible_and_prefix_stable() {
    let model = LinearSde::diagonal(&[1.0, 0.5], &[0.7, 1.3], 1.0).unwrap();
    let cfg = SimConfig::new(50, 300, 42).with_record_every(5);
    let a = simulate_em(&model, &[0.5, -1.0], &cfg).unwrap();
    let b = simulate_em(&model, &[0.5, -1.0], &cfg).unwrap();
    assert_eq!(a.raw_states(), b.raw_states());
    let more = simulate_em(&model, &[0.5, -1.0], &cfg.clone().with_paths(500)).unwrap();
    for k in 0..a.times().len() {
        for p in 0..300 {
            assert_eq!(a.state(k, p), more.state(k, p));
        }
    }
    let other = simulate_em(&model, &[0.5, -1.0], &cfg.with_seed(43)).unwrap();
    assert_ne!(a.raw_states(), other.raw_states());
}

#[test]
fn recording_stride_subsamples_the_same_paths() {
    let model = ou();
    let every = simulate_em(&model, &[1.0], &SimConfig::new(40, 64, 5)).unwrap();
    let sparse = simulate_em(&model, &[1.0], &SimConfig::new(40, 64, 5).with_record_every(8)).unwrap();
    assert_eq!(sparse.times().len(), 6);
    for (j, &t) in sparse.times().iter().enumerate() {
        let k = every.index_of(t).unwrap();
        assert_eq!(sparse.node(j), every.node(k));
    }
}

#[test]
fn martingale_statistics_detect_a_wrong_generator() {
    let model = LinearSde::diagonal(&[1.0, 2.0], &[1.0, 0.5], 1.0).unwrap();
    let ens = simulate_em(&model, &[1.0, -0.5], &SimConfig::new(400, 40_000, 13).with_record_every(20)).unwrap();
    let f = FinitelyBasedFunction::product(vec![
        FinitelyBasedFunction::bump(0, 0.5, 2.0).unwrap(),
        FinitelyBasedFunction::bump(1, 0.0, 1.5).unwrap(),
    ])
    .unwrap();
    let g = [
        Conditioner::one(),
        Conditioner::new(vec![(0.5, FinitelyBasedFunction::bump(1, -0.5, 1.0).unwrap())]).unwrap(),
    ];
    let truth = martingale_test(&ens, &f, &model, 0.5, 1.0, &g).unwrap();
    assert!(truth.iter().all(|s| s.z.abs() <= 4.0), "{truth:?}");
    let wrong = LinearSde::diagonal(&[1.0, 0.5], &[1.0, 0.5], 1.0).unwrap();
    let z = martingale_test(&ens, &f, &wrong, 0.5, 1.0, &g).unwrap();
    assert!(z.iter().any(|s| s.z.abs() > 6.0), "{z:?}");
}

#[test]
fn divergent_paths_are_reported() {
    let blowup = ClosureModel::new(
        "y^3",
        1,
        1,
        1.0,
        |_, y: &[f64], b: &mut [f64]| b[0] = y[0] * y[0] * y[0],
        |_, _, s: &mut [f64]| s[0] = 0.1,
    );
    let out = simulate_em(&blowup, &[5.0], &SimConfig::new(100, 4, 0));
    assert!(matches!(out, Err(Error::Divergence { .. })), "{out:?}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn energy_estimate_dominates_the_initial_energy(seed in 0u64..1000, x0 in -2.0f64..2.0) {
        let ens = simulate_em(&ou(), &[x0], &SimConfig::new(50, 200, seed).with_record_every(5)).unwrap();
        let nf = NFunction::h_power(2.0);
        let e1 = energy_estimate(&ens, 1.0, &nf);
        prop_assert!(e1.is_finite() && e1 >= x0 * x0 - 1e-12);
        prop_assert!(energy_estimate(&ens, 0.5, &nf).is_infinite());
    }
}
