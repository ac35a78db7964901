//! Derivatives of `P_{s,t}` for polynomial test functions against exact
//! Gaussian moments (Isserlis) differentiated symbolically.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ouflow_core::field::{self, Monomial};
use ouflow_core::gaussian::covariance;
use ouflow_core::{derivative_p, evolve, Budget, Method, OperatorFamily};

type Poly = BTreeMap<Vec<u32>, f64>;

// E[prod_i y_{idx_i}] for y ~ N(0, q), summing over perfect matchings.
fn isserlis(idx: &[usize], q: &DMatrix<f64>) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    if idx.len() % 2 == 1 {
        return 0.0;
    }
    let first = idx[0];
    let mut total = 0.0;
    for j in 1..idx.len() {
        let rest: Vec<usize> = idx[1..].iter().enumerate().filter(|(k, _)| k + 1 != j).map(|(_, v)| *v).collect();
        total += q[(first, idx[j])] * isserlis(&rest, q);
    }
    total
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

// F(m) = E[phi(m + y)] as a polynomial in m.
fn gaussian_smoothing(phi: &[Monomial], q: &DMatrix<f64>) -> Poly {
    let mut out = Poly::new();
    for t in phi {
        let dim = t.powers.len();
        let mut js = vec![0u32; dim];
        loop {
            let mut idx = Vec::new();
            let mut c = t.coef;
            for k in 0..dim {
                c *= binom(t.powers[k], js[k]);
                idx.extend(std::iter::repeat(k).take(js[k] as usize));
            }
            let moment = isserlis(&idx, q);
            if moment != 0.0 {
                let key: Vec<u32> = (0..dim).map(|k| t.powers[k] - js[k]).collect();
                *out.entry(key).or_insert(0.0) += c * moment;
            }
            // next multi-index j <= powers
            let mut k = 0;
            while k < dim {
                if js[k] < t.powers[k] {
                    js[k] += 1;
                    break;
                }
                js[k] = 0;
                k += 1;
            }
            if k == dim {
                break;
            }
        }
    }
    out
}

fn directional(p: &Poly, v: &DVector<f64>) -> Poly {
    let mut out = Poly::new();
    for (powers, c) in p {
        for k in 0..powers.len() {
            if powers[k] > 0 {
                let mut q = powers.clone();
                q[k] -= 1;
                *out.entry(q).or_insert(0.0) += c * powers[k] as f64 * v[k];
            }
        }
    }
    out
}

fn eval(p: &Poly, m: &DVector<f64>) -> f64 {
    p.iter().map(|(pw, c)| c * pw.iter().enumerate().map(|(k, e)| m[k].powi(*e as i32)).product::<f64>()).sum()
}

fn dense_model() -> OperatorFamily {
    OperatorFamily::dense(
        "dense3",
        3,
        1.0,
        Arc::new(|t| DMatrix::from_row_slice(3, 3, &[-1.0, 0.3 * t, 0.0, -0.2, -0.5, 0.4, 0.1, 0.0, -2.0 + t])),
        Arc::new(|t| DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.2, 0.3, 0.8 + 0.2 * t, 0.0, 0.0, -0.4, 1.1])),
    )
    .unwrap()
    .with_forcing(Arc::new(|t| DVector::from_vec(vec![0.5, -t, 0.2])))
    .unwrap()
}

fn check(model: &OperatorFamily, terms: Vec<Monomial>, x: DVector<f64>, dirs: Vec<DVector<f64>>, s: f64, t: f64) {
    let n = model.dimension();
    let phi = field::polynomial(n, terms.clone());
    let u = evolve(model, s, t).unwrap().entries;
    let q = covariance(model, s, t).unwrap().covariance;
    let m = ouflow_core::mean(model, &x, s, t).unwrap();
    let mut poly = gaussian_smoothing(&terms, &q);
    for h in &dirs {
        poly = directional(&poly, &(&u * h));
    }
    let want = eval(&poly, &m);
    let got = derivative_p(model, &phi, s, t, &x, &dirs, Method::TensorQuadrature, &Budget::default()).unwrap();
    let scale = want.abs().max(1.0);
    assert!(
        (got.value - want).abs() <= 1e-8 * scale,
        "n = {}: got {} want {} (diff {:e})",
        dirs.len(),
        got.value,
        want,
        got.value - want
    );
}

fn quartic(n: usize) -> Vec<Monomial> {
    let mut terms = Vec::new();
    let pick = |k: usize| -> Vec<u32> {
        let mut p = vec![0; n];
        p[k % n] += 1;
        p
    };
    let add = |a: &[u32], b: &[u32]| -> Vec<u32> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
    let p0 = pick(0);
    let p1 = pick(1);
    let p2 = pick(2);
    terms.push(Monomial { coef: 0.7, powers: add(&add(&p0, &p0), &add(&p1, &p2)) });
    terms.push(Monomial { coef: -1.3, powers: add(&add(&p1, &p1), &add(&p1, &p1)) });
    terms.push(Monomial { coef: 0.4, powers: add(&add(&p0, &p2), &p2) });
    terms.push(Monomial { coef: 2.0, powers: add(&p0, &p1) });
    terms.push(Monomial { coef: -0.5, powers: p2.clone() });
    terms.push(Monomial { coef: 1.1, powers: vec![0; n] });
    terms
}

#[test]
fn weights_reproduce_isserlis_derivatives_dense_three_dimensional() {
    let model = dense_model();
    let x = DVector::from_vec(vec![0.4, -0.3, 0.9]);
    let basis = [
        DVector::from_vec(vec![1.0, 0.0, 0.0]),
        DVector::from_vec(vec![0.2, -1.0, 0.5]),
        DVector::from_vec(vec![0.0, 0.3, 1.0]),
        DVector::from_vec(vec![-0.7, 0.4, 0.1]),
    ];
    for n in 1..=4 {
        check(&model, quartic(3), x.clone(), basis[..n].to_vec(), 0.2, 0.9);
    }
}

#[test]
fn weights_reproduce_isserlis_derivatives_scalar_family() {
    let model = OperatorFamily::scalar_constant("ou2", 2, 1.0, -0.8, 1.3).unwrap();
    let x = DVector::from_vec(vec![-0.5, 1.2]);
    let h = [
        DVector::from_vec(vec![1.0, 0.5]),
        DVector::from_vec(vec![0.0, 1.0]),
        DVector::from_vec(vec![1.0, -1.0]),
        DVector::from_vec(vec![0.3, 0.3]),
    ];
    for n in 1..=4 {
        check(&model, quartic(2), x.clone(), h[..n].to_vec(), 0.0, 0.6);
    }
}

#[test]
fn weights_reproduce_isserlis_derivatives_one_dimensional() {
    let model = OperatorFamily::scalar_constant("ou", 1, 1.0, -1.0, 1.0).unwrap();
    let terms = vec![
        Monomial { coef: 1.0, powers: vec![4] },
        Monomial { coef: -2.0, powers: vec![3] },
        Monomial { coef: 0.5, powers: vec![1] },
    ];
    for n in 1..=4 {
        let dirs = vec![DVector::from_element(1, 1.0); n];
        check(&model, terms.clone(), DVector::from_element(1, 0.7), dirs, 0.1, 1.0);
    }
}
