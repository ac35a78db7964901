//! Expectations `E[F(m + y) W(z)]` under `y = V diag(sqrt(lambda)) z`,
//! `z ~ N(0, I)`, where `W` is a polynomial weight in linear forms of `z`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::matchings::perfect_matching_sums;
use super::{Budget, MCEstimate, Method};
use crate::error::Result;
use crate::field::{FieldFunction, Profile, Shape};
use crate::gaussian::PsdRoot;
use crate::quadrature::{adaptive_vec, Rule};
use crate::rng;

const MC_TAG: u64 = 0x4d43_4553;
// Standard normal mass beyond |z| = 10 is below 1e-22.
const TAIL: f64 = 10.0;
const GH_LEVELS: [usize; 10] = [6, 8, 12, 16, 24, 32, 48, 64, 96, 128];

/// `W(z) = sum_S coeffs[S] prod_{i in S} <ell_i, z>` with `S` a bitmask over
/// the columns of `ell`.
#[derive(Debug, Clone)]
pub(crate) struct PolyWeight {
    pub ell: DMatrix<f64>,
    pub coeffs: Vec<f64>,
}

impl PolyWeight {
    pub fn unit(dimension: usize) -> Self {
        PolyWeight { ell: DMatrix::zeros(dimension, 0), coeffs: vec![1.0] }
    }

    /// The integration-by-parts weight `I_n` for columns `ell_i = V^T Lambda h_i`:
    /// a signed sum over partial matchings of `prod g_ij prod w_i`.
    pub fn matching(ell: DMatrix<f64>) -> Self {
        let n = ell.ncols();
        let g = ell.tr_mul(&ell);
        let pm = perfect_matching_sums(n, |i, j| -g[(i, j)]);
        let full = (1usize << n) - 1;
        let coeffs = (0..=full).map(|s| pm[full & !s]).collect();
        PolyWeight { ell, coeffs }
    }

    pub fn order(&self) -> usize {
        self.ell.ncols()
    }

    fn eval(&self, z: &DVector<f64>, w: &mut [f64], prods: &mut [f64]) -> f64 {
        let n = self.order();
        for i in 0..n {
            w[i] = self.ell.column(i).dot(z);
        }
        prods[0] = 1.0;
        let mut total = self.coeffs[0];
        for mask in 1..self.coeffs.len() {
            let i = mask.trailing_zeros() as usize;
            prods[mask] = prods[mask & (mask - 1)] * w[i];
            total += self.coeffs[mask] * prods[mask];
        }
        total
    }
}

/// `E[xi^j]` for a standard normal `xi`.
pub fn normal_moment(j: usize) -> f64 {
    if j % 2 == 1 {
        0.0
    } else {
        (1..j).step_by(2).map(|k| k as f64).product()
    }
}

/// `E[psi(mu + sigma xi) xi^j]` for `j = 0..=jmax`, with error estimates.
pub(crate) fn profile_moments(profile: &Profile, mu: f64, sigma: f64, jmax: usize) -> (Vec<f64>, Vec<f64>) {
    let centre = profile.value(mu);
    let exact: Vec<f64> = (0..=jmax).map(|j| centre * normal_moment(j)).collect();
    if sigma == 0.0 {
        return (exact, vec![0.0; jmax + 1]);
    }
    let breaks: Vec<f64> = profile.breaks.iter().map(|b| (b - mu) / sigma).filter(|z| z.abs() < TAIL).collect();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let psi = &profile.derivatives[0];
    let res = adaptive_vec(
        |z, out| {
            let d = (psi(mu + sigma * z) - centre) * norm * (-0.5 * z * z).exp();
            let mut p = d;
            for o in out.iter_mut() {
                *o = p;
                p *= z;
            }
        },
        jmax + 1,
        -TAIL,
        TAIL,
        &breaks,
        1e-15,
        1e-12,
        4000,
    );
    let values = res.value.iter().zip(&exact).map(|(v, e)| v + e).collect();
    (values, res.error)
}

fn estimate(value: f64, stderr: f64, samples: usize, method: Method, seed: u64) -> MCEstimate {
    MCEstimate { value, stderr, sample_count: samples, method, seed }
}

/// Expectation of `field(mean + y) * weight(z)` by the cheapest exact route.
pub(crate) fn expect(
    field: &FieldFunction,
    mean: &DVector<f64>,
    root: &PsdRoot,
    weight: &PolyWeight,
    method: Method,
    budget: &Budget,
) -> Result<MCEstimate> {
    if method == Method::TensorQuadrature {
        if let Some((c, profile)) = field.as_ridge() {
            let (v, e) = ridge(&c, &profile, mean, root, weight);
            return Ok(estimate(v, e, 1, Method::TensorQuadrature, budget.seed));
        }
        if let Shape::Product(factors) = field.shape() {
            if root.is_diagonal() {
                let (v, e) = product(factors, mean, root, weight);
                return Ok(estimate(v, e, factors.len(), Method::TensorQuadrature, budget.seed));
            }
        }
        if root.rank() <= budget.max_quadrature_dimension {
            return Ok(hermite(field, mean, root, weight, budget));
        }
    }
    Ok(monte_carlo(field, mean, root, weight, budget))
}

// Combine per-subset moment sums into E[F W]:
// sum_S c_S sum_{T subset S} rho^T M(|T|) Isserlis_C(S \ T).
fn combine(coeffs: &[f64], rho: &[f64], moments: &[f64], isserlis: &[f64]) -> f64 {
    let mut total = 0.0;
    for (s, c) in coeffs.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        // iterate over submasks T of s, including s and 0
        let mut t = s;
        loop {
            let rest = s & !t;
            if isserlis[rest] != 0.0 {
                let mut r = 1.0;
                let mut bits = t;
                while bits != 0 {
                    r *= rho[bits.trailing_zeros() as usize];
                    bits &= bits - 1;
                }
                inner += r * moments[t.count_ones() as usize] * isserlis[rest];
            }
            if t == 0 {
                break;
            }
            t = (t - 1) & s;
        }
        total += c * inner;
    }
    total
}

fn ridge(c: &DVector<f64>, profile: &Profile, mean: &DVector<f64>, root: &PsdRoot, weight: &PolyWeight) -> (f64, f64) {
    let n = weight.order();
    let mu = c.dot(mean);
    // <c, V sqrt(lambda) z> = <a, z>
    let mut a = if root.is_diagonal() { c.clone() } else { root.eigenvectors.tr_mul(c) };
    for k in 0..a.len() {
        a[k] *= root.eigenvalues[k].sqrt();
    }
    let sigma = a.norm();
    let e = if sigma > 0.0 { a / sigma } else { DVector::zeros(c.len()) };
    let rho: Vec<f64> = (0..n).map(|i| weight.ell.column(i).dot(&e)).collect();
    let g = weight.ell.tr_mul(&weight.ell);
    let isserlis = perfect_matching_sums(n, |i, j| g[(i, j)] - rho[i] * rho[j]);
    let (moments, errors) = profile_moments(profile, mu, sigma, n);
    let value = combine(&weight.coeffs, &rho, &moments, &isserlis);
    let abs_coeffs: Vec<f64> = weight.coeffs.iter().map(|v| v.abs()).collect();
    let abs_rho: Vec<f64> = rho.iter().map(|v| v.abs()).collect();
    let abs_iss: Vec<f64> = isserlis.iter().map(|v| v.abs()).collect();
    let error = combine(&abs_coeffs, &abs_rho, &errors, &abs_iss);
    (value, error)
}

fn product(factors: &[Profile], mean: &DVector<f64>, root: &PsdRoot, weight: &PolyWeight) -> (f64, f64) {
    let n = weight.order();
    let size = 1usize << n;
    let mut dp = vec![0.0; size];
    let mut dp_abs = vec![0.0; size];
    let mut dp_err = vec![0.0; size];
    dp[0] = 1.0;
    dp_abs[0] = 1.0;
    dp_err[0] = 1.0;
    for (k, profile) in factors.iter().enumerate() {
        let sigma = root.eigenvalues[k].sqrt();
        let (m, err) = profile_moments(profile, mean[k], sigma, n);
        let mut next = vec![0.0; size];
        let mut next_abs = vec![0.0; size];
        let mut next_err = vec![0.0; size];
        for a in 0..size {
            if dp[a] == 0.0 && dp_abs[a] == 0.0 {
                continue;
            }
            let free = (size - 1) & !a;
            let mut t = free;
            loop {
                let mut l = 1.0;
                let mut bits = t;
                while bits != 0 {
                    l *= weight.ell[(k, bits.trailing_zeros() as usize)];
                    bits &= bits - 1;
                }
                let j = t.count_ones() as usize;
                next[a | t] += dp[a] * m[j] * l;
                next_abs[a | t] += dp_abs[a] * m[j].abs() * l.abs();
                next_err[a | t] += dp_err[a] * (m[j].abs() + err[j]) * l.abs();
                if t == 0 {
                    break;
                }
                t = (t - 1) & free;
            }
        }
        dp = next;
        dp_abs = next_abs;
        dp_err = next_err;
    }
    let value: f64 = weight.coeffs.iter().zip(&dp).map(|(c, d)| c * d).sum();
    let error: f64 = weight.coeffs.iter().zip(dp_err.iter().zip(&dp_abs)).map(|(c, (e, a))| c.abs() * (e - a)).sum();
    (value, error.max(0.0))
}

fn hermite_level(
    field: &FieldFunction,
    mean: &DVector<f64>,
    root: &PsdRoot,
    weight: &PolyWeight,
    active: &[usize],
    rule: &Rule,
) -> f64 {
    let dim = mean.len();
    let r = active.len();
    let p = rule.len();
    let total = p.pow(r as u32);
    let n = weight.order();
    // chunk the index space so that the summation order is fixed
    let chunk = p.max(1);
    let partial: Vec<f64> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut z = DVector::<f64>::zeros(dim);
            let mut w = vec![0.0; n];
            let mut prods = vec![0.0; 1 << n];
            let mut acc = 0.0;
            for idx in c * chunk..((c + 1) * chunk).min(total) {
                let mut rem = idx;
                let mut wt = 1.0;
                for &k in active {
                    let i = rem % p;
                    rem /= p;
                    z[k] = rule.nodes[i];
                    wt *= rule.weights[i];
                }
                let y = mean + root.color(&z);
                acc += wt * field.eval(&y) * weight.eval(&z, &mut w, &mut prods);
            }
            acc
        })
        .collect();
    partial.iter().sum()
}

fn hermite(field: &FieldFunction, mean: &DVector<f64>, root: &PsdRoot, weight: &PolyWeight, budget: &Budget) -> MCEstimate {
    let active: Vec<usize> = (0..mean.len()).filter(|k| root.retained()[*k]).collect();
    let r = active.len() as u32;
    let start = weight.order() + 2;
    let mut prev: Option<f64> = None;
    let mut delta = f64::INFINITY;
    let mut points = 0;
    let mut value = 0.0;
    for &p in GH_LEVELS.iter().filter(|p| **p >= start.min(GH_LEVELS[GH_LEVELS.len() - 1])) {
        if points > 0 && p.saturating_pow(r) > budget.max_quadrature_points {
            break;
        }
        let rule = Rule::gauss_hermite(p);
        value = hermite_level(field, mean, root, weight, &active, &rule);
        points = p.pow(r);
        if let Some(v) = prev {
            delta = (value - v).abs();
            if delta < budget.quadrature_tolerance {
                break;
            }
        }
        prev = Some(value);
        if r == 0 {
            delta = 0.0;
            break;
        }
    }
    estimate(value, delta, points, Method::TensorQuadrature, budget.seed)
}

fn monte_carlo(field: &FieldFunction, mean: &DVector<f64>, root: &PsdRoot, weight: &PolyWeight, budget: &Budget) -> MCEstimate {
    let dim = mean.len();
    let active: Vec<usize> = (0..dim).filter(|k| root.retained()[*k]).collect();
    let count = budget.sample_count(weight);
    let n = weight.order();
    let blocks = count.div_ceil(rng::BLOCK);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut stream = rng::stream(budget.seed, &[MC_TAG, b as u64]);
            let mut z = DVector::<f64>::zeros(dim);
            let mut draw = vec![0.0; active.len()];
            let mut w = vec![0.0; n];
            let mut prods = vec![0.0; 1 << n];
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let rows = rng::BLOCK.min(count - b * rng::BLOCK);
            for _ in 0..rows {
                rng::fill_normal(&mut stream, &mut draw);
                for (d, &k) in draw.iter().zip(&active) {
                    z[k] = *d;
                }
                let y = mean + root.color(&z);
                let v = field.eval(&y) * weight.eval(&z, &mut w, &mut prods);
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let nf = count as f64;
    let value = s1 / nf;
    let var = ((s2 / nf - value * value) * nf / (nf - 1.0).max(1.0)).max(0.0);
    estimate(value, (var / nf).sqrt(), count, Method::MonteCarlo, budget.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments() {
        assert_eq!(normal_moment(0), 1.0);
        assert_eq!(normal_moment(3), 0.0);
        assert_eq!(normal_moment(4), 3.0);
        assert_eq!(normal_moment(6), 15.0);
    }

    #[test]
    fn matching_weight_second_order() {
        let ell = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let w = PolyWeight::matching(ell.clone());
        let z = DVector::from_vec(vec![0.3, -0.7]);
        let w1 = ell.column(0).dot(&z);
        let w2 = ell.column(1).dot(&z);
        let g = ell.column(0).dot(&ell.column(1));
        let mut a = vec![0.0; 2];
        let mut p = vec![0.0; 4];
        assert!((w.eval(&z, &mut a, &mut p) - (w1 * w2 - g)).abs() < 1e-15);
    }
}
