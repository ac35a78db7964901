use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use ouflow_core::gaussian::{forcing_offset, modal_variances};
use ouflow_core::{
    cm_weight, covariance, evolve, make_example1, mean, psd_sqrt, sample, smoothing_bundle, trace_truncation_curve,
    Error, Example1Params, OperatorFamily,
};

fn scalar_ou() -> OperatorFamily {
    OperatorFamily::scalar_constant("ou", 1, 1.0, -1.0, 1.0).unwrap()
}

fn constant_dense() -> (OperatorFamily, DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.3, -2.0]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.7]);
    let (a2, b2) = (a.clone(), b.clone());
    let m = OperatorFamily::dense("dense", 2, 1.0, Arc::new(move |_| a2.clone()), Arc::new(move |_| b2.clone()))
        .unwrap();
    (m, a, b)
}

#[test]
fn scalar_closed_forms() {
    let m = scalar_ou();
    let q = (1.0 - (-2f64).exp()) / 2.0;
    let b = smoothing_bundle(&m, 0.0, 1.0).unwrap();
    assert_relative_eq!(b.evolution.entries[(0, 0)], (-1f64).exp(), max_relative = 1e-9);
    assert_relative_eq!(b.law.covariance[(0, 0)], q, max_relative = 1e-9);
    assert_relative_eq!(b.lambda_norm, (-1f64).exp() / q.sqrt(), max_relative = 1e-9);
    let x = DVector::from_element(1, 2.0);
    assert_relative_eq!(mean(&m, &x, 0.0, 1.0).unwrap()[0], 2.0 * (-1f64).exp(), max_relative = 1e-12);
}

#[test]
fn lyapunov_identity_for_constant_coefficients() {
    // A Q + Q A^T + B B^T = e^{A tau} B B^T e^{A^T tau}
    let (m, a, b) = constant_dense();
    let q = covariance(&m, 0.1, 0.9).unwrap().covariance;
    let e = (&a * 0.8).exp();
    let bb = &b * b.transpose();
    let lhs = &a * &q + &q * a.transpose() + &bb;
    let rhs = &e * &bb * e.transpose();
    assert!((lhs - rhs).abs().max() < 1e-9);
}

#[test]
fn covariance_matches_direct_quadrature_oracle() {
    let (m, a, b) = constant_dense();
    let bb = &b * b.transpose();
    // composite Simpson on e^{A r} B B^T e^{A^T r}, r in [0, 0.6]
    let n = 2000;
    let h = 0.6 / n as f64;
    let mut acc = DMatrix::zeros(2, 2);
    for i in 0..=n {
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let e = (&a * (h * i as f64)).exp();
        acc += (&e * &bb * e.transpose()) * w;
    }
    acc *= h / 3.0;
    let q = covariance(&m, 0.2, 0.8).unwrap().covariance;
    assert!((q - acc).abs().max() < 1e-10);
}

#[test]
fn diagonal_modes_match_per_mode_quadrature() {
    let model = make_example1(Example1Params::with_exponents(16, 2.0, 1.0)).unwrap();
    let q = covariance(model.family(), 0.3, 0.9).unwrap().covariance;
    let modal = modal_variances(model.family(), 0.3, 0.9).unwrap();
    for k in 0..16 {
        assert_relative_eq!(q[(k, k)], modal[k], max_relative = 1e-8);
    }
    // eps = 0 gives beta_k^2 (1 - e^{-2 lambda tau}) / (2 lambda)
    let flat = make_example1(Example1Params { eps: 0.0, ..Example1Params::with_exponents(8, 2.0, 1.0) }).unwrap();
    let q = covariance(flat.family(), 0.0, 0.5).unwrap().covariance;
    for k in 1..=8usize {
        let (lam, beta) = ((k * k) as f64, 1.0 / k as f64);
        let want = beta * beta * (1.0 - (-2.0 * lam * 0.5).exp()) / (2.0 * lam);
        assert_relative_eq!(q[(k - 1, k - 1)], want, max_relative = 1e-9);
    }
}

#[test]
fn trace_truncation_is_monotone_and_bounded() {
    let model = make_example1(Example1Params::with_exponents(64, 2.0, 1.0)).unwrap();
    let curve = trace_truncation_curve(model.family(), 0.0, 1.0, &[4, 8, 16, 32, 64]).unwrap();
    assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
    let full = curve.last().unwrap().1;
    let proxy = model.trace_proxy();
    // each mode's variance is at most sup beta_k^2 / (2 |lambda_k|)
    assert!(full <= proxy / 2.0 + 1e-12);
    for (n, tr) in &curve {
        assert!(full - tr <= model.trace_tail(*n) + 1e-12);
    }
}

#[test]
fn forcing_offset_integrates_the_source() {
    // dX = (-X + 1) dt: g(t, s) = 1 - e^{-(t-s)}
    let m = scalar_ou().with_forcing(Arc::new(|_| DVector::from_element(1, 1.0))).unwrap();
    let g = forcing_offset(&m, 0.0, 0.7).unwrap();
    assert_relative_eq!(g[0], 1.0 - (-0.7f64).exp(), max_relative = 1e-10);
}

#[test]
fn samples_reproduce_the_covariance() {
    let (m, _, _) = constant_dense();
    let law = covariance(&m, 0.0, 1.0).unwrap();
    let n = 200_000;
    let ys = sample(&law, n, 11);
    assert_eq!(ys, sample(&law, n, 11));
    let emp = ys.transpose() * &ys / n as f64;
    for i in 0..2 {
        for j in 0..2 {
            let q = &law.covariance;
            let se = ((q[(i, i)] * q[(j, j)] + q[(i, j)].powi(2)) / n as f64).sqrt();
            assert!((emp[(i, j)] - q[(i, j)]).abs() < 5.0 * se, "({i},{j})");
        }
    }
}

#[test]
fn cameron_martin_weight_reweights_shifted_laws() {
    let (m, _, _) = constant_dense();
    let b = smoothing_bundle(&m, 0.0, 1.0).unwrap();
    let h = DVector::from_vec(vec![0.4, -0.2]);
    let uh = &b.evolution.entries * &h;
    let n = 200_000;
    let ys = sample(&b.law, n, 5);
    let (mut w_sum, mut shifted, mut w_sq) = (0.0, 0.0, 0.0);
    for r in 0..n {
        let y = ys.row(r).transpose();
        let w = cm_weight(&b, &h, 1.0, &y).unwrap();
        w_sum += w;
        w_sq += w * w;
        shifted += w * y[0];
    }
    let nf = n as f64;
    let se = ((w_sq / nf - (w_sum / nf).powi(2)) / nf).sqrt();
    assert!((w_sum / nf - 1.0).abs() < 5.0 * se);
    // E[y_0 w] = (U h)_0
    assert!((shifted / nf - uh[0]).abs() < 0.02);
}

#[test]
fn pseudo_inverse_on_singular_matrix() {
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let r = psd_sqrt(&q, 1e-12).unwrap();
    assert_eq!(r.rank(), 1);
    let p = r.pinv_sqrt();
    // Q^{1/2} Q^{-1/2} is the projection onto the range
    let proj = r.sqrt_factor() * &p;
    assert!((proj - DMatrix::from_element(2, 2, 0.5)).abs().max() < 1e-12);
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(matches!(psd_sqrt(&bad, 1e-12), Err(Error::NegativeSpectrum { .. })));
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(matches!(psd_sqrt(&asym, 1e-12), Err(Error::NotSymmetric { .. })));
}

#[test]
fn degenerate_noise_is_flagged() {
    let m = OperatorFamily::dense(
        "half-noise",
        2,
        1.0,
        Arc::new(|_| DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])),
        Arc::new(|_| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])),
    )
    .unwrap();
    let b = smoothing_bundle(&m, 0.0, 1.0).unwrap();
    assert!(b.degenerate);
    assert!(matches!(b.require_nondegenerate(), Err(Error::DegenerateBundle { .. })));
    let _ = evolve(&m, 0.0, 1.0).unwrap();
}
