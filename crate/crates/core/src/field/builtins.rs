//! Built-in field functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DerivEval, FieldFunction, Profile, RegularityClass};
use crate::model::ScalarFn;

// Classes for fields with derivatives of every order.
const SMOOTH: RegularityClass = RegularityClass::Ck(usize::MAX);
const MAX_DERIVATIVE: usize = 8;

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn constant(dimension: usize, c: f64) -> FieldFunction {
    FieldFunction::ridge("const", SMOOTH, DVector::zeros(dimension), Profile::constant(c))
        .with_seminorm(0.0)
        .with_sup(c.abs())
}

/// `<c, x>`.
pub fn linear(c: DVector<f64>) -> FieldFunction {
    let norm = c.norm();
    let zero: ScalarFn = Arc::new(|_| 0.0);
    let profile = Profile::new(vec![Arc::new(|v| v), Arc::new(|_| 1.0), zero.clone(), zero.clone(), zero], vec![]);
    FieldFunction::ridge("linear", SMOOTH, c, profile).with_seminorm(norm)
}

/// `x^T M x` with `M` symmetrized.
pub fn quadratic(m: DMatrix<f64>) -> FieldFunction {
    let m = (&m + m.transpose()) * 0.5;
    let n = m.nrows();
    let (m0, m1, m2) = (m.clone(), m.clone(), m);
    let d1: DerivEval = Arc::new(move |x, h| 2.0 * (&m1 * x).dot(&h[0]));
    let d2: DerivEval = Arc::new(move |_, h| 2.0 * (&m2 * &h[0]).dot(&h[1]));
    let zero: DerivEval = Arc::new(|_, _| 0.0);
    FieldFunction::new("quadratic", n, SMOOTH, Arc::new(move |x| x.dot(&(&m0 * x))))
        .with_derivatives(vec![d1, d2, zero.clone(), zero.clone(), zero.clone(), zero])
}

fn trig_profile(shift: usize) -> Profile {
    // cos, -sin, -cos, sin, ... starting `shift` steps in
    let cycle: [fn(f64) -> f64; 4] = [f64::cos, |v| -v.sin(), |v| -v.cos(), f64::sin];
    let derivatives = (0..=MAX_DERIVATIVE).map(|k| Arc::new(cycle[(k + shift) % 4]) as ScalarFn).collect();
    Profile::new(derivatives, vec![])
}

/// `cos <c, x>`.
pub fn cosine(c: DVector<f64>) -> FieldFunction {
    let norm = c.norm();
    FieldFunction::ridge("cosine", SMOOTH, c, trig_profile(0)).with_seminorm(norm).with_sup(1.0)
}

/// `sin <c, x>`.
pub fn sine(c: DVector<f64>) -> FieldFunction {
    let norm = c.norm();
    FieldFunction::ridge("sine", SMOOTH, c, trig_profile(3)).with_seminorm(norm).with_sup(1.0)
}

/// `min(1, |x - x0|^alpha)`, with Hölder seminorm exactly 1.
pub fn holder_cusp(alpha: f64, x0: DVector<f64>) -> FieldFunction {
    let label = "holderCusp";
    let class = RegularityClass::Calpha(alpha);
    if x0.len() == 1 {
        let c = x0[0];
        let profile = Profile::new(
            vec![Arc::new(move |v: f64| (v - c).abs().powf(alpha).min(1.0))],
            vec![c - 1.0, c, c + 1.0],
        );
        return FieldFunction::ridge(label, class, DVector::from_element(1, 1.0), profile)
            .with_seminorm(1.0)
            .with_sup(1.0);
    }
    let n = x0.len();
    FieldFunction::new(label, n, class, Arc::new(move |x| (x - &x0).norm().powf(alpha).min(1.0)))
        .with_seminorm(1.0)
        .with_sup(1.0)
}

/// `|<c, x>|`.
pub fn absolute(c: DVector<f64>) -> FieldFunction {
    let norm = c.norm();
    let profile = Profile::new(vec![Arc::new(f64::abs), Arc::new(sgn)], vec![0.0]);
    FieldFunction::ridge("absolute", RegularityClass::Calpha(1.0), c, profile).with_seminorm(norm)
}

/// `sgn(<c, x> - offset)`.
pub fn halfspace(c: DVector<f64>, offset: f64) -> FieldFunction {
    let profile = Profile::new(vec![Arc::new(move |v| sgn(v - offset))], vec![offset]);
    FieldFunction::ridge("halfspace", RegularityClass::Bb, c, profile).with_sup(1.0)
}

/// `prod_k sgn(x_k)`.
pub fn quadrant_sign(dimension: usize) -> FieldFunction {
    let factor = Profile::new(vec![Arc::new(sgn)], vec![0.0]);
    FieldFunction::product("quadrantSign", RegularityClass::Bb, vec![factor; dimension]).with_sup(1.0)
}

/// One term `coef * prod_k x_k^{powers[k]}` of a polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

fn poly_eval(terms: &[Monomial], x: &DVector<f64>) -> f64 {
    terms
        .iter()
        .map(|t| t.coef * t.powers.iter().enumerate().map(|(k, p)| x[k].powi(*p as i32)).product::<f64>())
        .sum()
}

fn poly_directional(terms: &[Monomial], h: &DVector<f64>) -> Vec<Monomial> {
    let mut out = Vec::new();
    for t in terms {
        for (k, &p) in t.powers.iter().enumerate() {
            if p > 0 && h[k] != 0.0 {
                let mut powers = t.powers.clone();
                powers[k] -= 1;
                out.push(Monomial { coef: t.coef * p as f64 * h[k], powers });
            }
        }
    }
    out
}

/// `sum_j coef_j x^{powers_j}` with derivatives of every order.
pub fn polynomial(dimension: usize, terms: Vec<Monomial>) -> FieldFunction {
    assert!(terms.iter().all(|t| t.powers.len() == dimension), "monomial arity must match dimension");
    let terms = Arc::new(terms);
    let value = terms.clone();
    let derivatives = (1..=MAX_DERIVATIVE)
        .map(|_| {
            let terms = terms.clone();
            Arc::new(move |x: &DVector<f64>, dirs: &[DVector<f64>]| {
                let mut p = (*terms).clone();
                for h in dirs {
                    p = poly_directional(&p, h);
                }
                poly_eval(&p, x)
            }) as DerivEval
        })
        .collect();
    FieldFunction::new("polynomial", dimension, SMOOTH, Arc::new(move |x| poly_eval(&value, x)))
        .with_derivatives(derivatives)
}
