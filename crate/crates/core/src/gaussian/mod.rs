//! Gaussian laws of the transition family: covariance `Q(t, s)`, means
//! `m^x(t, s)`, clipped square roots and the smoothing operator `Lambda`.

mod bundle;
mod frozen;
mod psd;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::op_norm;
use crate::model::{evolve, OperatorFamily};
use crate::quadrature::Rule;

pub use bundle::{
    cm_weight, sample, smoothing_bundle, smoothing_bundle_with, trace_truncation_curve, BundleSummary,
    SmoothingBundle, DEFAULT_RANGE_TOL,
};
pub(crate) use bundle::assemble;
pub use frozen::SHORT_GAP;
pub(crate) use frozen::frozen_parts;
pub use psd::{psd_sqrt, PsdRoot, DEFAULT_CLIP};

/// Settings for the composite Gauss–Legendre time quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadOptions {
    /// Gauss–Legendre nodes per panel.
    pub order: usize,
    pub rel_tol: f64,
    pub max_panels: usize,
    pub clip: f64,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { order: 8, rel_tol: 1e-10, max_panels: 1 << 14, clip: DEFAULT_CLIP }
    }
}

/// The Gaussian measure `N(mean, covariance)` with its clipped root.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub root: PsdRoot,
    /// Uniform panel count at which the time quadrature converged.
    pub panels: usize,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, clip: f64) -> Result<Self> {
        if mean.len() != covariance.nrows() {
            return Err(Error::Dimension { expected: covariance.nrows(), got: mean.len() });
        }
        let root = psd_sqrt(&covariance, clip)?;
        Ok(GaussianLaw { mean, covariance, root, panels: 0 })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }

    pub fn effective_rank(&self) -> usize {
        self.root.rank()
    }

    pub fn sqrt_factor(&self) -> &DMatrix<f64> {
        self.root.sqrt_factor()
    }

    pub fn clip_threshold(&self) -> f64 {
        self.root.clip_threshold
    }

    pub fn with_mean(mut self, mean: DVector<f64>) -> Self {
        self.mean = mean;
        self
    }
}

// Quadrature nodes on [s, t]: `panels` uniform panels with the last one
// subdivided geometrically towards t so that the narrowest panel resolves
// the fastest exponential decay of U(t, r).
fn time_nodes(s: f64, t: f64, panels: usize, stiffness: f64, rule: &Rule) -> Vec<(f64, f64)> {
    let h = (t - s) / panels as f64;
    let levels = if stiffness * h > 0.5 { ((2.0 * stiffness * h).log2().ceil() as usize).min(60) } else { 0 };
    let mut edges: Vec<f64> = (0..panels).map(|i| s + h * i as f64).collect();
    let last = edges[panels - 1];
    for j in 1..=levels {
        edges.push(t - (t - last) * 0.5f64.powi(j as i32));
    }
    edges.push(t);
    let mut nodes = Vec::with_capacity(edges.len() * rule.len());
    for w in edges.windows(2) {
        let c = 0.5 * (w[0] + w[1]);
        let half = 0.5 * (w[1] - w[0]);
        for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
            nodes.push((c + half * x, wt * half));
        }
    }
    nodes
}

fn stiffness(model: &OperatorFamily, s: f64, t: f64) -> f64 {
    (0..=16)
        .map(|i| {
            let tau = s + (t - s) * i as f64 / 16.0;
            match model.modes() {
                Some(m) => (0..m.len()).map(|k| m.drift(k, tau).abs()).fold(0.0, f64::max),
                None => op_norm(&model.drift(tau)),
            }
        })
        .fold(0.0, f64::max)
}

enum Propagators {
    Diagonal(Vec<DVector<f64>>),
    Dense(Vec<DMatrix<f64>>),
}

// U(t, r) at every node r. Dense families without a closed form chain short
// evolutions between neighbouring nodes.
fn propagators(model: &OperatorFamily, nodes: &[(f64, f64)], t: f64) -> Result<Propagators> {
    if let Some(modes) = model.modes() {
        return Ok(Propagators::Diagonal(
            nodes.iter().map(|(r, _)| crate::model::modal_evolution(modes, *r, t)).collect(),
        ));
    }
    if model.has_closed_form() {
        return nodes
            .iter()
            .map(|(r, _)| evolve(model, *r, t).map(|u| u.entries))
            .collect::<Result<Vec<_>>>()
            .map(Propagators::Dense);
    }
    let n = model.dimension();
    let mut out = vec![DMatrix::zeros(n, n); nodes.len()];
    let mut acc = DMatrix::<f64>::identity(n, n);
    let mut upper = t;
    for i in (0..nodes.len()).rev() {
        let r = nodes[i].0;
        let step = evolve(model, r, upper)?;
        acc = &acc * &step.entries;
        out[i] = acc.clone();
        upper = r;
    }
    Ok(Propagators::Dense(out))
}

fn covariance_at(model: &OperatorFamily, s: f64, t: f64, panels: usize, kappa: f64, rule: &Rule) -> Result<DMatrix<f64>> {
    let n = model.dimension();
    let nodes = time_nodes(s, t, panels, kappa, rule);
    let mut q = DMatrix::<f64>::zeros(n, n);
    match propagators(model, &nodes, t)? {
        Propagators::Diagonal(us) => {
            let modes = model.modes().expect("modal family");
            let mut diag = DVector::<f64>::zeros(n);
            for ((r, w), u) in nodes.iter().zip(&us) {
                for k in 0..n {
                    let v = u[k] * modes.diffusion(k, *r);
                    diag[k] += w * v * v;
                }
            }
            q.set_diagonal(&diag);
        }
        Propagators::Dense(us) => {
            for ((r, w), u) in nodes.iter().zip(&us) {
                let ub = u * model.diffusion(*r);
                q += (&ub * ub.transpose()) * *w;
            }
            q = (&q + q.transpose()) * 0.5;
        }
    }
    Ok(q)
}

fn converged(prev: &DMatrix<f64>, next: &DMatrix<f64>, rel_tol: f64) -> (bool, f64) {
    let tr = next.trace().abs();
    let mut worst = if tr > 0.0 { (next.trace() - prev.trace()).abs() / tr } else { 0.0 };
    for j in 0..next.ncols() {
        for i in 0..next.nrows() {
            let scale = (next[(i, i)].abs() * next[(j, j)].abs()).sqrt().max(1e-300);
            let d = (next[(i, j)] - prev[(i, j)]).abs();
            if d > 0.0 {
                worst = worst.max(d / scale);
            }
        }
    }
    (worst <= rel_tol, worst)
}

/// Covariance `Q(t, s) = int_s^t U(t, r) B(r) B(r)^T U(t, r)^T dr` as a
/// centred Gaussian law; panels are doubled until trace and entries settle.
pub fn covariance(model: &OperatorFamily, s: f64, t: f64) -> Result<GaussianLaw> {
    covariance_with(model, s, t, QuadOptions::default())
}

pub fn covariance_with(model: &OperatorFamily, s: f64, t: f64, opts: QuadOptions) -> Result<GaussianLaw> {
    model.check_times(s, t)?;
    let n = model.dimension();
    if s == t {
        return GaussianLaw::new(DVector::zeros(n), DMatrix::zeros(n, n), opts.clip);
    }
    let rule = Rule::gauss_legendre(opts.order);
    let kappa = stiffness(model, s, t);
    let mut panels = 2;
    let mut prev = covariance_at(model, s, t, panels, kappa, &rule)?;
    let mut change = f64::INFINITY;
    while panels < opts.max_panels {
        panels *= 2;
        let next = covariance_at(model, s, t, panels, kappa, &rule)?;
        let (ok, worst) = converged(&prev, &next, opts.rel_tol);
        change = worst;
        prev = next;
        if ok {
            let mut law = GaussianLaw::new(DVector::zeros(n), prev, opts.clip)?;
            law.panels = panels;
            return Ok(law);
        }
    }
    Err(Error::QuadratureNonConvergence { achieved: change })
}

fn drift_offset_at(model: &OperatorFamily, s: f64, t: f64, panels: usize, kappa: f64, rule: &Rule) -> Result<DVector<f64>> {
    let nodes = time_nodes(s, t, panels, kappa, rule);
    let mut g = DVector::<f64>::zeros(model.dimension());
    match propagators(model, &nodes, t)? {
        Propagators::Diagonal(us) => {
            for ((r, w), u) in nodes.iter().zip(&us) {
                g += u.component_mul(&model.forcing(*r)) * *w;
            }
        }
        Propagators::Dense(us) => {
            for ((r, w), u) in nodes.iter().zip(&us) {
                g += (u * model.forcing(*r)) * *w;
            }
        }
    }
    Ok(g)
}

/// Forcing contribution `g(t, s) = int_s^t U(t, r) f(r) dr`.
pub fn forcing_offset(model: &OperatorFamily, s: f64, t: f64) -> Result<DVector<f64>> {
    model.check_times(s, t)?;
    let n = model.dimension();
    if s == t || !model.has_forcing() {
        return Ok(DVector::zeros(n));
    }
    let opts = QuadOptions::default();
    let rule = Rule::gauss_legendre(opts.order);
    let kappa = stiffness(model, s, t);
    let mut panels = 2;
    let mut prev = drift_offset_at(model, s, t, panels, kappa, &rule)?;
    let mut change = f64::INFINITY;
    while panels < opts.max_panels {
        panels *= 2;
        let next = drift_offset_at(model, s, t, panels, kappa, &rule)?;
        let scale = next.amax().max(1e-300);
        change = (&next - &prev).amax() / scale;
        prev = next;
        if change <= opts.rel_tol || prev.amax() == 0.0 {
            return Ok(prev);
        }
    }
    Err(Error::QuadratureNonConvergence { achieved: change })
}

/// Mean `m^x(t, s) = U(t, s) x + g(t, s)`.
pub fn mean(model: &OperatorFamily, x: &DVector<f64>, s: f64, t: f64) -> Result<DVector<f64>> {
    if x.len() != model.dimension() {
        return Err(Error::Dimension { expected: model.dimension(), got: x.len() });
    }
    let u = evolve(model, s, t)?;
    Ok(&u.entries * x + forcing_offset(model, s, t)?)
}

/// Per-mode variances `t_k(t, s)` of a scalar or diagonal family, each by
/// its own adaptive Gauss–Kronrod integral. Used as a cross-check of
/// [`covariance`].
pub fn modal_variances(model: &OperatorFamily, s: f64, t: f64) -> Result<Vec<f64>> {
    model.check_times(s, t)?;
    let modes = model
        .modes()
        .ok_or_else(|| Error::Precondition("per-mode variances need a diagonal family".into()))?;
    Ok((0..modes.len())
        .map(|k| {
            let decay = |r: f64| {
                let (d, _) = crate::quadrature::adaptive(|x| modes.drift(k, x), r, t, 1e-14, 1e-14);
                let b = modes.diffusion(k, r);
                (2.0 * d).exp() * b * b
            };
            let fast = (0..=8).map(|i| modes.drift(k, s + (t - s) * i as f64 / 8.0).abs()).fold(0.0, f64::max);
            let mut breaks = Vec::new();
            let mut d = 1.0 / fast.max(1e-300);
            while d < t - s && breaks.len() < 60 {
                breaks.push(t - d);
                d *= 2.0;
            }
            crate::quadrature::adaptive_vec(|r, out| out[0] = decay(r), 1, s, t, &breaks, 1e-300, 1e-13, 20000).value[0]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_covariance_closed_form() {
        let m = OperatorFamily::scalar_constant("ou", 1, 1.0, -1.0, 1.0).unwrap();
        let law = covariance(&m, 0.0, 1.0).unwrap();
        let exact = (1.0 - (-2f64).exp()) / 2.0;
        assert!((law.covariance[(0, 0)] - exact).abs() < 1e-13);
    }

    #[test]
    fn empty_interval_is_zero() {
        let m = OperatorFamily::scalar_constant("ou", 2, 1.0, -1.0, 1.0).unwrap();
        let law = covariance(&m, 0.3, 0.3).unwrap();
        assert_eq!(law.covariance, DMatrix::zeros(2, 2));
        assert_eq!(law.effective_rank(), 0);
    }

    #[test]
    fn forced_mean_closed_form() {
        let m = OperatorFamily::scalar_constant("ou", 1, 1.0, -1.0, 1.0)
            .unwrap()
            .with_forcing(std::sync::Arc::new(|_| DVector::from_element(1, 1.0)))
            .unwrap();
        let g = mean(&m, &DVector::zeros(1), 0.0, 1.0).unwrap();
        assert!((g[0] - (1.0 - (-1f64).exp())).abs() < 1e-13);
    }
}
