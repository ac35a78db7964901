//! Mild solution `u = u0 + u1` of the backward Kolmogorov equation,
//! singular-kernel time quadrature for its spatial derivatives, and a
//! pointwise residual of the finite-dimensional PDE.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldFunction, RegularityClass, SourceTerm};
use crate::model::OperatorFamily;
use crate::quadrature::Rule;
use crate::transition::{Budget, MCEstimate, Method, TransitionKernel};

/// Graded mesh on `[s, t]`, stored as offsets `sigma_j - s` so that layers
/// far below the resolution of `s` stay distinct. The offsets are
/// `(t - s) (j / M)^{1 / (1 - gamma)}`, optionally merged with dyadic layers
/// `(t - s) 2^{-j}` down to a relative floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedTimeMesh {
    pub s: f64,
    pub t: f64,
    pub gamma: f64,
    pub count: usize,
    pub floor: f64,
    pub gaps: Vec<f64>,
}

impl GradedTimeMesh {
    pub fn new(s: f64, t: f64, gamma: f64, count: usize) -> Result<Self> {
        Self::with_floor(s, t, gamma, count, 0.0)
    }

    pub fn with_floor(s: f64, t: f64, gamma: f64, count: usize, floor: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::NonIntegrable { gamma });
        }
        if !(s < t) || count == 0 {
            return Err(Error::InvalidParameter(format!("mesh needs s < t and M >= 1, got ({s}, {t}), M = {count}")));
        }
        let h = t - s;
        let power = 1.0 / (1.0 - gamma);
        let mut gaps: Vec<f64> = (0..=count).map(|j| h * (j as f64 / count as f64).powf(power)).collect();
        if floor > 0.0 {
            let mut w = 0.5;
            while w >= floor {
                gaps.push(h * w);
                w *= 0.5;
            }
        }
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        gaps.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()));
        // keep every panel away from s no wider than its distance to s
        let mut refined = vec![gaps[0], gaps[1]];
        for &b in &gaps[2..] {
            let mut a = *refined.last().unwrap();
            while b - a > a {
                a *= 2.0;
                refined.push(a);
            }
            refined.push(b);
        }
        let mut gaps = refined;
        *gaps.last_mut().unwrap() = h;
        gaps[0] = 0.0;
        Ok(GradedTimeMesh { s, t, gamma, count, floor, gaps })
    }

    /// Absolute mesh times `s + gap`.
    pub fn nodes(&self) -> Vec<f64> {
        self.gaps.iter().map(|g| self.s + g).collect()
    }

    /// Quadrature offsets `sigma - s` and weights: Gauss–Legendre per panel,
    /// with the substitution `sigma = s + h v^{1/(1-gamma)}` on the first
    /// panel to absorb a `(sigma - s)^{-gamma}` singularity.
    pub fn quadrature(&self, order: usize) -> Vec<(f64, f64)> {
        let rule = Rule::gauss_legendre(order);
        let r = 1.0 / (1.0 - self.gamma);
        let mut out = Vec::with_capacity(self.gaps.len() * order);
        for (i, w) in self.gaps.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
                let v = 0.5 * (x + 1.0);
                if i == 0 && self.gamma > 0.0 {
                    let h = b - a;
                    out.push((a + h * v.powf(r), 0.5 * wt * h * r * v.powf(r - 1.0)));
                } else {
                    out.push((a + (b - a) * v, 0.5 * wt * (b - a)));
                }
            }
        }
        out
    }
}

/// One cell of a solution table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRow {
    pub s: f64,
    pub x: Vec<f64>,
    pub u0: f64,
    pub u0_stderr: f64,
    pub u1: f64,
    pub u1_stderr: f64,
    pub u: f64,
    /// Set when the time quadrature hit its panel limit before settling.
    pub flagged: bool,
}

/// Settings of the plain composite quadrature for `u1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub method: Method,
    pub budget: Budget,
    pub order: usize,
    pub tolerance: f64,
    pub max_panels: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { method: Method::TensorQuadrature, budget: Budget::default(), order: 8, tolerance: 1e-10, max_panels: 256 }
    }
}

fn uniform_nodes(s: f64, t: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let rule = Rule::gauss_legendre(order);
    let h = (t - s) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let a = h * p as f64;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            out.push((a + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}

// sum_j w_j F(s + gap_j, x) for every x, where F is evaluated through the
// kernel of (s, s + gap_j).
fn integrate_nodes<F>(model: &OperatorFamily, s: f64, nodes: &[(f64, f64)], xs: &[DVector<f64>], f: F) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&TransitionKernel, f64, &DVector<f64>) -> Result<MCEstimate> + Sync,
{
    let per_node: Vec<Vec<(f64, f64)>> = nodes
        .par_iter()
        .map(|(gap, w)| {
            let kernel = TransitionKernel::with_gap(model, s, *gap)?;
            let sigma = s + gap;
            xs.iter()
                .map(|x| f(&kernel, sigma, x).map(|e| (w * e.value, (w * e.stderr).abs())))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![(0.0, 0.0); xs.len()];
    for node in &per_node {
        for (acc, v) in out.iter_mut().zip(node) {
            acc.0 += v.0;
            acc.1 += v.1;
        }
    }
    Ok(out)
}

/// `u1(s, x) = -int_s^t P_{s,sigma} psi(sigma, .)(x) dsigma` for every `x`,
/// with panel doubling. Returns `(value, stderr, converged)` per point.
pub fn source_integral(
    model: &OperatorFamily,
    psi: &SourceTerm,
    s: f64,
    t: f64,
    xs: &[DVector<f64>],
    opts: &SolveOptions,
) -> Result<Vec<(f64, f64, bool)>> {
    model.check_times(s, t)?;
    if s == t {
        return Ok(vec![(0.0, 0.0, true); xs.len()]);
    }
    let eval = |k: &TransitionKernel, sigma: f64, x: &DVector<f64>| k.apply(&psi.at(sigma), x, opts.method, &opts.budget);
    let mut panels = 2;
    let mut prev = integrate_nodes(model, s, &uniform_nodes(s, t, panels, opts.order), xs, eval)?;
    loop {
        panels *= 2;
        let next = integrate_nodes(model, s, &uniform_nodes(s, t, panels, opts.order), xs, eval)?;
        let settled = prev.iter().zip(&next).all(|(a, b)| {
            (a.0 - b.0).abs() <= opts.tolerance * b.0.abs().max(1.0) + 3.0 * b.1
        });
        prev = next;
        if settled || panels >= opts.max_panels {
            return Ok(prev.into_iter().map(|(v, e)| (-v, e, settled)).collect());
        }
    }
}

/// Table of `u0 = P_{s,t} phi`, `u1` and `u = u0 + u1` over `s_grid x xs`.
pub fn solve_u(
    model: &OperatorFamily,
    phi: &FieldFunction,
    psi: &SourceTerm,
    t: f64,
    s_grid: &[f64],
    xs: &[DVector<f64>],
    opts: &SolveOptions,
) -> Result<Vec<SolutionRow>> {
    let mut rows = Vec::with_capacity(s_grid.len() * xs.len());
    for &s in s_grid {
        model.check_times(s, t)?;
        let kernel = TransitionKernel::new(model, s, t)?;
        let u1 = source_integral(model, psi, s, t, xs, opts)?;
        for (x, (v1, e1, ok)) in xs.iter().zip(u1) {
            let u0 = kernel.apply(phi, x, opts.method, &opts.budget)?;
            rows.push(SolutionRow {
                s,
                x: x.iter().copied().collect(),
                u0: u0.value,
                u0_stderr: u0.stderr,
                u1: v1,
                u1_stderr: e1,
                u: u0.value + v1,
                flagged: !ok,
            });
        }
    }
    Ok(rows)
}

/// Settings for graded-mesh integration of `D^k u1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradingOptions {
    /// Blow-up exponent of `|Lambda(t, s)|`.
    pub theta: f64,
    /// Hölder exponent of the source; `None` takes it from the declared class.
    pub alpha: Option<f64>,
    pub initial_nodes: usize,
    pub max_nodes: usize,
    pub order: usize,
    /// Absolute stopping tolerance for node doubling.
    pub tolerance: f64,
    /// Relative depth of extra dyadic layers at `sigma = s` (0 disables).
    pub floor: f64,
    pub method: Method,
    pub budget: Budget,
}

impl Default for GradingOptions {
    fn default() -> Self {
        GradingOptions {
            theta: 0.5,
            alpha: None,
            initial_nodes: 8,
            max_nodes: 512,
            order: 8,
            tolerance: 1e-4,
            floor: 0.0,
            method: Method::TensorQuadrature,
            budget: Budget::default(),
        }
    }
}

/// Singularity order of `sigma -> D^k P_{s,sigma} psi` at `sigma = s`.
pub fn grading_exponent(psi: &SourceTerm, k: usize, opts: &GradingOptions) -> Result<f64> {
    let alpha = opts.alpha.unwrap_or(match psi.class() {
        RegularityClass::Calpha(a) => a,
        RegularityClass::Ck(_) | RegularityClass::Zk(_) => 1.0,
        RegularityClass::Bb => 0.0,
    });
    let gamma = ((k as f64 - alpha) * opts.theta).max(0.0);
    if gamma >= 1.0 {
        return Err(Error::NonIntegrable { gamma });
    }
    Ok(gamma)
}

/// `D^k u1(s, x)(h_1, .., h_k) = -int_s^t D^k P_{s,sigma} psi(sigma, .)(x)(h..) dsigma`
/// for several points at once, on a graded mesh with node doubling.
pub fn derivative_u1_batch(
    model: &OperatorFamily,
    psi: &SourceTerm,
    s: f64,
    t: f64,
    xs: &[DVector<f64>],
    dirs: &[DVector<f64>],
    opts: &GradingOptions,
) -> Result<Vec<MCEstimate>> {
    model.check_times(s, t)?;
    if s >= t {
        return Err(Error::NoSmoothing { s, t });
    }
    let gamma = grading_exponent(psi, dirs.len(), opts)?;
    let eval = |k: &TransitionKernel, sigma: f64, x: &DVector<f64>| {
        k.derivative(&psi.at(sigma), x, dirs, opts.method, &opts.budget)
    };
    let run = |m: usize| -> Result<(Vec<(f64, f64)>, usize)> {
        let mesh = GradedTimeMesh::with_floor(s, t, gamma, m, opts.floor)?;
        let nodes = mesh.quadrature(opts.order);
        Ok((integrate_nodes(model, s, &nodes, xs, eval)?, nodes.len()))
    };
    let mut m = opts.initial_nodes.max(1);
    let (mut prev, _) = run(m)?;
    loop {
        m *= 2;
        let (next, count) = run(m)?;
        let settled = prev.iter().zip(&next).all(|(a, b)| (a.0 - b.0).abs() <= opts.tolerance.max(3.0 * b.1));
        let delta: Vec<f64> = prev.iter().zip(&next).map(|(a, b)| (a.0 - b.0).abs()).collect();
        prev = next;
        if settled || m >= opts.max_nodes {
            return Ok(prev
                .iter()
                .zip(delta)
                .map(|((v, e), d)| MCEstimate {
                    value: -v,
                    stderr: e.max(d),
                    sample_count: count,
                    method: opts.method,
                    seed: opts.budget.seed,
                })
                .collect());
        }
    }
}

pub fn derivative_u1(
    model: &OperatorFamily,
    psi: &SourceTerm,
    s: f64,
    t: f64,
    x: &DVector<f64>,
    dirs: &[DVector<f64>],
    opts: &GradingOptions,
) -> Result<MCEstimate> {
    Ok(derivative_u1_batch(model, psi, s, t, std::slice::from_ref(x), dirs, opts)?.remove(0))
}

/// Pointwise residual of `d_s u + 1/2 Tr(B B^T D^2 u) + <A x + f, Du> = psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualProbe {
    pub s: f64,
    pub x: Vec<f64>,
    pub u: f64,
    pub time_derivative: f64,
    pub residual: f64,
}

pub fn pde_residual(
    model: &OperatorFamily,
    phi: &FieldFunction,
    psi: &SourceTerm,
    t: f64,
    s_probe: &[f64],
    x_probe: &[DVector<f64>],
    grading: &GradingOptions,
) -> Result<Vec<ResidualProbe>> {
    let n = model.dimension();
    if n > 3 {
        return Err(Error::Precondition(format!("residual check supports N <= 3, got {n}")));
    }
    let step = 1e-4 * t;
    let solve = SolveOptions { method: grading.method, budget: grading.budget, ..SolveOptions::default() };
    let basis: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut out = Vec::new();
    for &s in s_probe {
        if !(s - step > 0.0 && s + step < t) {
            return Err(Error::Precondition(format!("probe time {s} is not interior to (0, {t})")));
        }
        let plus = solve_u(model, phi, psi, t, &[s + step], x_probe, &solve)?;
        let minus = solve_u(model, phi, psi, t, &[s - step], x_probe, &solve)?;
        let here = solve_u(model, phi, psi, t, &[s], x_probe, &solve)?;
        let kernel = TransitionKernel::new(model, s, t)?;
        let a = model.drift(s);
        let b = model.diffusion(s);
        let bbt = &b * b.transpose();
        let f = model.forcing(s);
        let psi_s = psi.at(s);
        // derivatives of u1 for all points at once
        let mut grad1 = vec![vec![0.0; n]; x_probe.len()];
        let mut hess1 = vec![vec![vec![0.0; n]; n]; x_probe.len()];
        for i in 0..n {
            let g = derivative_u1_batch(model, psi, s, t, x_probe, &basis[i..=i], grading)?;
            for (p, e) in g.iter().enumerate() {
                grad1[p][i] = e.value;
            }
            for j in i..n {
                let h = derivative_u1_batch(model, psi, s, t, x_probe, &[basis[i].clone(), basis[j].clone()], grading)?;
                for (p, e) in h.iter().enumerate() {
                    hess1[p][i][j] = e.value;
                    hess1[p][j][i] = e.value;
                }
            }
        }
        for (p, x) in x_probe.iter().enumerate() {
            let mut grad = DVector::zeros(n);
            let mut hess = nalgebra::DMatrix::zeros(n, n);
            for i in 0..n {
                grad[i] = kernel.derivative(phi, x, &basis[i..=i], grading.method, &grading.budget)?.value + grad1[p][i];
                for j in i..n {
                    let d = kernel
                        .derivative(phi, x, &[basis[i].clone(), basis[j].clone()], grading.method, &grading.budget)?
                        .value
                        + hess1[p][i][j];
                    hess[(i, j)] = d;
                    hess[(j, i)] = d;
                }
            }
            let dt = (plus[p].u - minus[p].u) / (2.0 * step);
            let drift = &a * x + &f;
            let residual = dt + 0.5 * (&bbt * &hess).trace() + drift.dot(&grad) - psi_s.eval(x);
            out.push(ResidualProbe {
                s,
                x: x.iter().copied().collect(),
                u: here[p].u,
                time_derivative: dt,
                residual: residual.abs(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field;

    #[test]
    fn mesh_is_graded() {
        let m = GradedTimeMesh::new(0.0, 1.0, 0.5, 10).unwrap();
        assert!((m.gaps[1] - 0.01).abs() < 1e-15);
        assert!(m.gaps.windows(2).skip(1).all(|w| w[1] - w[0] <= w[0] * (1.0 + 1e-12)));
        assert!(m.gaps.windows(2).all(|w| w[1] > w[0]));
        assert!(GradedTimeMesh::new(0.0, 1.0, 1.0, 10).is_err());
        let f = GradedTimeMesh::with_floor(0.0, 1.0, 0.5, 4, 1e-6).unwrap();
        assert!(f.gaps[1] < 1e-6 * 2.0);
    }

    #[test]
    fn graded_quadrature_integrates_singularity() {
        let m = GradedTimeMesh::new(0.0, 1.0, 0.75, 8).unwrap();
        let v: f64 = m.quadrature(8).iter().map(|(x, w)| w * x.powf(-0.75) * (1.0 + x)).sum();
        assert!((v - (4.0 + 0.8)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn constant_source_gives_linear_u1() {
        let model = OperatorFamily::scalar_constant("ou", 1, 1.0, -1.0, 1.0).unwrap();
        let psi = SourceTerm::stationary(field::constant(1, 2.0));
        let rows = solve_u(
            &model,
            &field::constant(1, 0.0),
            &psi,
            1.0,
            &[0.25],
            &[DVector::from_element(1, 0.3)],
            &SolveOptions::default(),
        )
        .unwrap();
        assert!((rows[0].u1 + 2.0 * 0.75).abs() < 1e-12);
    }
}
