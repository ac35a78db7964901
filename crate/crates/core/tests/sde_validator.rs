use nalgebra::{DMatrix, DVector};
use ouflow_core::field;
use ouflow_core::sde::{law_check_with, refine, weak_check_with, weak_error_ratio, Z_THRESHOLD};
use ouflow_core::transition::{Budget, Method};
use ouflow_core::{law_check, make_example1, simulate, Example1Params, ModelSpec, OperatorFamily, PathEnsemble};

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

#[test]
fn noiseless_paths_follow_the_ode_to_first_order() {
    let model = OperatorFamily::scalar_constant("decay", 1, 1.0, -1.0, 0.0).unwrap();
    let exact = (-1f64).exp();
    let mut errors = Vec::new();
    for dt in [0.01, 0.005, 0.0025] {
        let e = simulate(&model, &v(&[1.0]), 0.0, 1.0, dt, 3, 9).unwrap();
        let col = e.terminal_states.column(0);
        assert!(col.iter().all(|x| *x == col[0]));
        // Euler oracle: (1 - dt)^{1/dt}
        let euler = (1.0 - dt).powf(1.0 / dt);
        assert!((col[0] - euler).abs() < 1e-12);
        errors.push((col[0] - exact).abs());
    }
    for w in errors.windows(2) {
        assert!((w[0] / w[1] - 2.0).abs() < 0.05, "{errors:?}");
    }
}

#[test]
fn zero_start_without_forcing_has_zero_mean() {
    let m = make_example1(Example1Params::with_exponents(3, 2.0, 1.0)).unwrap();
    let e = simulate(m.family(), &DVector::zeros(3), 0.0, 0.5, 0.01, 20_000, 4).unwrap();
    let paths = e.path_count() as f64;
    for i in 0..3 {
        let col = e.terminal_states.column(i);
        let mean = col.mean();
        let sd = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (paths - 1.0);
        assert!(mean.abs() <= Z_THRESHOLD * (sd / paths).sqrt(), "mode {i}: {mean}");
    }
}

#[test]
fn paths_do_not_depend_on_the_worker_count() {
    let model = ModelSpec::scalar_ou().build().unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate(&model, &v(&[1.0]), 0.0, 1.0, 0.01, 5_000, 21).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.terminal_states.as_slice(), three.terminal_states.as_slice());
    let other = simulate(&model, &v(&[1.0]), 0.0, 1.0, 0.01, 5_000, 22).unwrap();
    assert_ne!(one.terminal_states, other.terminal_states);
}

#[test]
fn step_size_must_divide_the_interval() {
    let model = ModelSpec::scalar_ou().build().unwrap();
    assert!(simulate(&model, &v(&[1.0]), 0.0, 1.0, 0.3, 10, 1).is_err());
    assert!(simulate(&model, &v(&[1.0]), 0.0, 1.0, -0.1, 10, 1).is_err());
    assert!(simulate(&model, &v(&[1.0]), 0.0, 1.0, 0.1, 0, 1).is_err());
}

#[test]
fn scalar_ensemble_matches_the_gaussian_law_and_functionals() {
    let model = ModelSpec::scalar_ou().build().unwrap();
    let e = simulate(&model, &v(&[1.0]), 0.0, 1.0, 1e-3, 100_000, 1).unwrap();
    let fine = refine(&e, &model).unwrap();
    let law = law_check_with(&e, &fine, &model).unwrap();
    assert!(law.passed, "{law:?}");
    let mean = law.entries.iter().find(|x| x.kind == "mean").unwrap();
    let var = law.entries.iter().find(|x| x.kind == "cov").unwrap();
    assert!((mean.exact - (-1f64).exp()).abs() < 1e-9);
    assert!((var.exact - 0.4323324).abs() < 1e-7);

    let budget = Budget::default();
    let one = weak_check_with(&e, &fine, &field::constant(1, 1.0), &model, Method::TensorQuadrature, &budget).unwrap();
    assert!(one.passed && (one.empirical - 1.0).abs() < 1e-12 && (one.analytic - 1.0).abs() < 1e-12);
    let square = field::quadratic(DMatrix::identity(1, 1));
    let sq = weak_check_with(&e, &fine, &square, &model, Method::TensorQuadrature, &budget).unwrap();
    assert!(sq.passed, "{sq:?}");
    assert!((sq.analytic - 0.5676676).abs() < 1e-6, "{sq:?}");
}

#[test]
fn noiseless_ensembles_have_exactly_zero_covariance() {
    let model = OperatorFamily::scalar_constant("decay", 2, 1.0, -1.0, 0.0).unwrap();
    let e = simulate(&model, &v(&[1.0, 2.0]), 0.0, 1.0, 0.01, 100, 3).unwrap();
    let law = law_check(&e, &model).unwrap();
    assert!(law.entries.iter().filter(|x| x.kind == "cov").all(|x| x.empirical == 0.0));
}

#[test]
fn cosine_functional_agrees_on_the_diagonal_family() {
    let m = make_example1(Example1Params::with_exponents(3, 2.0, 1.0)).unwrap();
    let e = simulate(m.family(), &v(&[1.0, -0.5, 0.25]), 0.0, 1.0, 1e-2, 50_000, 2).unwrap();
    let fine = refine(&e, m.family()).unwrap();
    let law = law_check_with(&e, &fine, m.family()).unwrap();
    assert!(law.passed, "{law:?}");
    let phi = field::cosine(v(&[1.0, 2.0, -1.0]));
    let r = weak_check_with(&e, &fine, &phi, m.family(), Method::TensorQuadrature, &Budget::default()).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn weak_error_halves_with_the_step() {
    let model = ModelSpec::scalar_ou().build().unwrap();
    let ratio = weak_error_ratio(&model, &v(&[1.0]), 0.0, 1.0, 0.1, 1_000_000, 5).unwrap();
    assert!((1.5..=2.8).contains(&ratio), "{ratio}");
}

#[test]
fn ensembles_survive_a_round_trip_to_disk() {
    let model = ModelSpec::scalar_ou().build().unwrap();
    let e = simulate(&model, &v(&[0.5]), 0.25, 0.75, 0.05, 64, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("paths.bin");
    e.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(u64::from_le_bytes(bytes[0..8].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 64);
    assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 0.05);
    assert_eq!(PathEnsemble::load(&path).unwrap(), e);
}
