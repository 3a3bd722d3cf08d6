use galerkin_core::fpke::{EmpiricalMeasure, Measure};
use galerkin_core::space::{apply_l, separating_family, FinitelyBasedFunction, Norm, SpaceTriple};
use galerkin_core::superposition::marginal_distance;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn fd_gradient(f: &FinitelyBasedFunction, y: &[f64], h: f64) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let (mut p, mut m) = (y.to_vec(), y.to_vec());
            p[i] += h;
            m[i] -= h;
            (f.value(&p) - f.value(&m)) / (2.0 * h)
        })
        .collect()
}

fn fd_hessian(f: &FinitelyBasedFunction, y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let at = |si: f64, sj: f64| {
                let mut z = y.to_vec();
                z[i] += si * h;
                z[j] += sj * h;
                f.value(&z)
            };
            out[i * n + j] = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
        }
    }
    out
}

fn measure(points: Vec<f64>) -> Measure {
    Measure::Empirical(EmpiricalMeasure::uniform(2, points).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn bumps_are_bounded_and_compactly_supported(
        c in -3.0f64..3.0, s in 0.2f64..4.0, y in -10.0f64..10.0,
    ) {
        let f = FinitelyBasedFunction::bump(0, c, s).unwrap();
        let v = f.value(&[y]);
        prop_assert!((0.0..=1.0).contains(&v));
        if (y - c).abs() >= s {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn derivatives_match_finite_differences(
        c0 in -1.0f64..1.0, c1 in -1.0f64..1.0, y0 in -1.5f64..1.5, y1 in -1.5f64..1.5,
    ) {
        let f = FinitelyBasedFunction::product(vec![
            FinitelyBasedFunction::bump(0, c0, 2.0).unwrap(),
            FinitelyBasedFunction::bump(1, c1, 2.0).unwrap(),
        ]).unwrap();
        let y = [y0, y1];
        for (a, b) in f.gradient(&y).iter().zip(fd_gradient(&f, &y, 1e-5)) {
            prop_assert!((a - b).abs() < 1e-6, "gradient {} vs {}", a, b);
        }
        for (a, b) in f.hessian(&y).iter().zip(fd_hessian(&f, &y, 1e-4)) {
            prop_assert!((a - b).abs() < 1e-4, "hessian {} vs {}", a, b);
        }
    }

    #[test]
    fn kolmogorov_operator_matches_finite_differences(
        y0 in -1.0f64..1.0, y1 in -1.0f64..1.0, y2 in -1.0f64..1.0,
        a01 in -0.3f64..0.3, b0 in -2.0f64..2.0, b1 in -2.0f64..2.0,
    ) {
        let f = FinitelyBasedFunction::product(vec![
            FinitelyBasedFunction::bump(0, 0.2, 1.5).unwrap(),
            FinitelyBasedFunction::bump(1, -0.1, 1.5).unwrap(),
        ]).unwrap();
        let y = [y0, y1, y2];
        let a = DMatrix::from_row_slice(3, 3, &[1.0, a01, 0.0, a01, 0.5, 0.2, 0.0, 0.2, 2.0]);
        let b = [b0, b1, 7.0];
        let g = fd_gradient(&f, &y, 1e-5);
        let h = fd_hessian(&f, &y, 1e-4);
        // coordinate 3 is outside the base, so a^{33} and b^3 cannot contribute
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                oracle += a[(i, j)] * h[i * 3 + j];
            }
            oracle += b[i] * g[i];
        }
        let lf = apply_l(&f, &y, &a, &b).unwrap();
        prop_assert!((lf - oracle).abs() < 1e-3 * (1.0 + oracle.abs()), "{} vs {}", lf, oracle);
    }

    #[test]
    fn triple_norms_are_ordered_and_dual(
        z in proptest::collection::vec(-10.0f64..10.0, 6),
        v in proptest::collection::vec(-10.0f64..10.0, 6),
    ) {
        let triple = SpaceTriple::polynomial(6, 2.0).unwrap();
        let x = triple.norm(&z, Norm::X).unwrap();
        let h = triple.norm(&z, Norm::H).unwrap();
        let xs = triple.norm(&z, Norm::XStar).unwrap();
        prop_assert!(xs <= h * (1.0 + 1e-12) && h <= x * (1.0 + 1e-12));
        let pairing = SpaceTriple::pairing(&z, &v);
        prop_assert!(pairing.abs() <= x * triple.norm(&v, Norm::XStar).unwrap() * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn family_distance_is_a_pseudometric(
        p in proptest::collection::vec(-4.0f64..4.0, 2..20),
        q in proptest::collection::vec(-4.0f64..4.0, 2..20),
        r in proptest::collection::vec(-4.0f64..4.0, 2..20),
    ) {
        let even = |v: Vec<f64>| { let k = v.len() / 2 * 2; v[..k].to_vec() };
        let (mu, nu, rho) = (measure(even(p)), measure(even(q)), measure(even(r)));
        let fam = separating_family(2, 3);
        let d = |a: &Measure, b: &Measure| marginal_distance(a, b, &fam).unwrap();
        prop_assert_eq!(d(&mu, &mu), 0.0);
        prop_assert!((d(&mu, &nu) - d(&nu, &mu)).abs() < 1e-15);
        prop_assert!(d(&mu, &rho) <= d(&mu, &nu) + d(&nu, &rho) + 1e-12);
    }
}

#[test]
fn family_separates_distinct_atoms() {
    let fam = separating_family(2, 4);
    let dirac = |x: f64, y: f64| measure(vec![x, y]);
    let pts = [(-3.5, 0.0), (-0.25, 0.25), (0.0, 0.0), (0.3, -2.0), (3.9, 3.9)];
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let d = marginal_distance(&dirac(a.0, a.1), &dirac(b.0, b.1), &fam).unwrap();
            assert!(d > 0.0, "{a:?} and {b:?} not separated");
        }
    }
}

#[test]
fn projection_keeps_leading_coordinates() {
    let triple = SpaceTriple::flat(4).unwrap();
    assert_eq!(triple.project(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.0, 2.0]);
    assert!(triple.project(&[1.0], 2).is_err());
    assert!(triple.project(&[1.0, 2.0, 3.0, 4.0], 5).is_err());
}
