use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ouflow_core::{cocycle_defect, evolve, make_example1, Error, Example1Params, OperatorFamily};
use proptest::prelude::*;

fn rotating_model() -> OperatorFamily {
    OperatorFamily::dense(
        "rotating",
        2,
        1.0,
        Arc::new(|t| DMatrix::from_row_slice(2, 2, &[-1.0, 2.0 * t, -2.0 * t, -0.5 - t])),
        Arc::new(|_| DMatrix::identity(2, 2)),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cocycle_law_holds(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let mut v = [a, b, c];
        v.sort_by(|x, y| x.total_cmp(y));
        let m = rotating_model();
        let full = evolve(&m, v[0], v[2]).unwrap().entries;
        let split = evolve(&m, v[1], v[2]).unwrap().entries * evolve(&m, v[0], v[1]).unwrap().entries;
        prop_assert!((full - split).abs().max() <= 1e-8);
    }
}

#[test]
fn constant_dense_drift_matches_matrix_exponential() {
    let a = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, 0.5, -1.0, 0.3, 0.0, -0.4, -3.0]);
    let a2 = a.clone();
    let m = OperatorFamily::dense("const", 3, 2.0, Arc::new(move |_| a2.clone()), Arc::new(|_| DMatrix::identity(3, 3)))
        .unwrap();
    let u = evolve(&m, 0.25, 1.75).unwrap();
    let oracle = (a * 1.5).exp();
    assert!((u.entries - oracle).abs().max() < 1e-9);
    assert!(u.defect <= u.tolerance);
}

#[test]
fn example1_modes_match_integrated_profile() {
    let p = Example1Params::default();
    let model = make_example1(p).unwrap();
    let (s, t) = (0.2, 0.7);
    let integral = p.c1 * (t - s) - p.eps / p.omega * ((p.omega * t).cos() - (p.omega * s).cos());
    let u = evolve(model.family(), s, t).unwrap().entries;
    for k in [1usize, 2, 5, 17, 64] {
        let want = (-(k as f64).powf(p.a) * integral).exp();
        let got = u[(k - 1, k - 1)];
        assert!((got - want).abs() <= 1e-12 + 1e-10 * want, "mode {k}: {got} vs {want}");
    }
    assert!((p.omega - 2.0 * PI).abs() < 1e-15);
}

#[test]
fn scalar_evolution_is_exponential() {
    let m = OperatorFamily::scalar_constant("ou", 2, 1.0, -1.0, 1.0).unwrap();
    let u = evolve(&m, 0.0, 1.0).unwrap().entries;
    assert!((u[(0, 0)] - (-1f64).exp()).abs() < 1e-14);
    assert_eq!(u[(0, 1)], 0.0);
    assert!(cocycle_defect(&m, 0.0, 0.3, 1.0).unwrap() < 1e-14);
}

#[test]
fn identity_at_equal_times_and_horizon_errors() {
    let m = rotating_model();
    assert_eq!(evolve(&m, 0.4, 0.4).unwrap().entries, DMatrix::identity(2, 2));
    assert!(matches!(evolve(&m, 0.5, 0.2), Err(Error::Horizon { .. })));
    assert!(matches!(evolve(&m, 0.0, 1.5), Err(Error::Horizon { .. })));
}

#[test]
fn forcing_is_carried_by_the_family() {
    let m = rotating_model().with_forcing(Arc::new(|t| DVector::from_vec(vec![t, 1.0]))).unwrap();
    assert!(m.has_forcing());
    assert_eq!(m.forcing(0.5), DVector::from_vec(vec![0.5, 1.0]));
}
