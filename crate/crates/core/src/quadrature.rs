//! Quadrature rules: Gauss–Legendre and probabilists' Gauss–Hermite via
//! Golub–Welsch, plus an adaptive Gauss–Kronrod (7/15) integrator with
//! vector-valued integrands and user breakpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gauss–Legendre rule on `[-1, 1]`.
    pub fn gauss_legendre(n: usize) -> Rule {
        assert!(n >= 1, "rule needs at least one node");
        let off: Vec<f64> = (1..n)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        let mut rule = golub_welsch(&vec![0.0; n], &off, 2.0);
        symmetrize(&mut rule);
        rule
    }

    /// Gauss–Hermite rule for the standard normal density (weights sum to 1).
    pub fn gauss_hermite(n: usize) -> Rule {
        assert!(n >= 1, "rule needs at least one node");
        let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
        let mut rule = golub_welsch(&vec![0.0; n], &off, 1.0);
        symmetrize(&mut rule);
        rule
    }

    /// Integrate `f` over `[a, b]` with this rule (assumed on `[-1, 1]`).
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(c + h * x))
            .sum::<f64>()
            * h
    }
}

fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> Rule {
    let n = diag.len();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = diag[i];
    }
    for (i, b) in off.iter().enumerate() {
        jac[(i, i + 1)] = *b;
        jac[(i + 1, i)] = *b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

// Both rules are symmetric about zero; enforce it exactly.
fn symmetrize(rule: &mut Rule) {
    let n = rule.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone)]
pub struct Adaptive {
    pub value: Vec<f64>,
    pub error: Vec<f64>,
    pub intervals: usize,
    pub converged: bool,
}

#[derive(Debug)]
struct Piece {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: Vec<f64>,
    key: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.partial_cmp(&other.key).unwrap_or(Ordering::Equal)
    }
}

fn kronrod<F: FnMut(f64, &mut [f64])>(f: &mut F, a: f64, b: f64, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut buf = vec![0.0; dim];
    let mut k = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    f(c, &mut buf);
    for d in 0..dim {
        k[d] = WGK[7] * buf[d];
        g[d] = WG[3] * buf[d];
    }
    for j in 0..7 {
        let x = h * XGK[j];
        for sign in [-1.0, 1.0] {
            f(c + sign * x, &mut buf);
            for d in 0..dim {
                k[d] += WGK[j] * buf[d];
                if j % 2 == 1 {
                    g[d] += WG[j / 2] * buf[d];
                }
            }
        }
    }
    let value: Vec<f64> = k.iter().map(|v| v * h).collect();
    let error: Vec<f64> = k.iter().zip(&g).map(|(kv, gv)| ((kv - gv) * h).abs()).collect();
    (value, error)
}

/// Adaptive Gauss–Kronrod integration of a vector-valued integrand over
/// `[a, b]`, with optional interior breakpoints.
///
/// Each component must satisfy `error <= max(abs_tol, rel_tol * |value|)`.
pub fn adaptive_vec<F>(
    mut f: F,
    dim: usize,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Adaptive
where
    F: FnMut(f64, &mut [f64]),
{
    let mut cuts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|x| *x > a && *x < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    inner.dedup();
    cuts.extend(inner);
    cuts.push(b);

    let mut heap = BinaryHeap::new();
    let mut total = vec![0.0; dim];
    let mut total_err = vec![0.0; dim];
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (value, error) = kronrod(&mut f, w[0], w[1], dim);
        for d in 0..dim {
            total[d] += value[d];
            total_err[d] += error[d];
        }
        let key = error.iter().cloned().fold(0.0, f64::max);
        heap.push(Piece { a: w[0], b: w[1], value, error, key });
    }

    let done = |total: &[f64], err: &[f64]| {
        total
            .iter()
            .zip(err)
            .all(|(v, e)| *e <= abs_tol.max(rel_tol * v.abs()))
    };

    let mut converged = done(&total, &total_err);
    while !converged && heap.len() < max_intervals {
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval cannot be split further in floating point
            heap.push(Piece { key: 0.0, ..worst });
            break;
        }
        let (v1, e1) = kronrod(&mut f, worst.a, mid, dim);
        let (v2, e2) = kronrod(&mut f, mid, worst.b, dim);
        for d in 0..dim {
            total[d] += v1[d] + v2[d] - worst.value[d];
            total_err[d] += e1[d] + e2[d] - worst.error[d];
        }
        let k1 = e1.iter().cloned().fold(0.0, f64::max);
        let k2 = e2.iter().cloned().fold(0.0, f64::max);
        heap.push(Piece { a: worst.a, b: mid, value: v1, error: e1, key: k1 });
        heap.push(Piece { a: mid, b: worst.b, value: v2, error: e2, key: k2 });
        converged = done(&total, &total_err);
    }

    // Re-sum to avoid drift from incremental updates.
    let mut value = vec![0.0; dim];
    let mut error = vec![0.0; dim];
    let intervals = heap.len();
    for p in heap.into_iter() {
        for d in 0..dim {
            value[d] += p.value[d];
            error[d] += p.error[d];
        }
    }
    Adaptive { value, error, intervals, converged }
}

/// Scalar convenience wrapper around [`adaptive_vec`].
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> (f64, f64) {
    let res = adaptive_vec(|x, out| out[0] = f(x), 1, a, b, &[], abs_tol, rel_tol, 4000);
    (res.value[0], res.error[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = Rule::gauss_legendre(6);
        // degree 11 is the limit for 6 nodes
        let v = rule.integrate(0.0, 2.0, |x| x.powi(11) + 3.0 * x.powi(4));
        let exact = 2f64.powi(12) / 12.0 + 3.0 * 2f64.powi(5) / 5.0;
        assert!((v - exact).abs() < 1e-10 * exact);
        assert!((rule.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_reproduces_normal_moments() {
        let rule = Rule::gauss_hermite(8);
        let m = |p: i32| -> f64 {
            rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(p)).sum()
        };
        assert!((m(0) - 1.0).abs() < 1e-14);
        assert!(m(1).abs() < 1e-14);
        assert!((m(2) - 1.0).abs() < 1e-13);
        assert!((m(4) - 3.0).abs() < 1e-12);
        assert!((m(6) - 15.0).abs() < 1e-11);
        assert!((m(8) - 105.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let (v, e) = adaptive(|x| x.powf(-0.5), 0.0, 1.0, 1e-10, 1e-10);
        assert!((v - 2.0).abs() < 1e-8, "{v} {e}");
    }

    #[test]
    fn adaptive_with_breakpoint_integrates_jump() {
        let res = adaptive_vec(
            |x, out| {
                out[0] = if x < 0.3 { 1.0 } else { -1.0 };
                out[1] = x * x;
            },
            2,
            0.0,
            1.0,
            &[0.3],
            1e-13,
            1e-13,
            100,
        );
        assert!(res.converged);
        assert!((res.value[0] - (0.3 - 0.7)).abs() < 1e-13);
        assert!((res.value[1] - 1.0 / 3.0).abs() < 1e-13);
    }
}
