//! The transition family `P_{s,t}` and its derivatives via Cameron–Martin
//! integration-by-parts weights.

mod engine;
mod matchings;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldFunction;
use crate::gaussian::{
    assemble, forcing_offset, frozen_parts, smoothing_bundle, SmoothingBundle, DEFAULT_RANGE_TOL, SHORT_GAP,
};
use crate::model::OperatorFamily;

pub use engine::normal_moment;
pub use matchings::{enumerate_partial_matchings, matching_count, Matching};
use engine::{expect, PolyWeight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Method {
    MonteCarlo,
    TensorQuadrature,
}

/// A Monte Carlo or quadrature estimate. For quadrature, `stderr` holds the
/// refinement change or the integrator's error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub stderr: f64,
    pub sample_count: usize,
    pub method: Method,
    pub seed: u64,
}

impl MCEstimate {
    pub fn exact(value: f64, method: Method, seed: u64) -> Self {
        MCEstimate { value, stderr: 0.0, sample_count: 0, method, seed }
    }
}

/// Sampling and quadrature limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    /// Base Monte Carlo sample count.
    pub samples: usize,
    pub max_samples: usize,
    /// Scale the sample count by `prod |Lambda h_i|^2` for derivative weights.
    pub auto_scale: bool,
    pub seed: u64,
    pub quadrature_tolerance: f64,
    pub max_quadrature_points: usize,
    /// Largest retained rank handled by tensor Gauss–Hermite.
    pub max_quadrature_dimension: usize,
    /// Largest derivative order accepted.
    pub max_order: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            samples: 100_000,
            max_samples: 4_000_000,
            auto_scale: true,
            seed: 0,
            quadrature_tolerance: 1e-9,
            max_quadrature_points: 4_000_000,
            max_quadrature_dimension: 6,
            max_order: 6,
        }
    }
}

impl Budget {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self.max_samples = self.max_samples.max(samples);
        self
    }

    fn sample_count(&self, weight: &PolyWeight) -> usize {
        let base = self.samples.max(2);
        if !self.auto_scale || weight.order() == 0 {
            return base;
        }
        let scale: f64 = (0..weight.order()).map(|i| weight.ell.column(i).norm_squared()).product();
        let want = base as f64 * scale.max(1.0);
        (want.min(self.max_samples.max(base) as f64)) as usize
    }
}

/// Everything needed to evaluate `P_{s,t}` and its derivatives for one
/// time pair: `U(t, s)`, the forcing offset `g(t, s)` and, for `s < t`,
/// the smoothing bundle.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    pub s: f64,
    pub t: f64,
    pub evolution: DMatrix<f64>,
    pub offset: DVector<f64>,
    bundle: Option<SmoothingBundle>,
}

impl TransitionKernel {
    pub fn new(model: &OperatorFamily, s: f64, t: f64) -> Result<Self> {
        model.check_times(s, t)?;
        if s == t {
            let n = model.dimension();
            return Ok(TransitionKernel {
                s,
                t,
                evolution: DMatrix::identity(n, n),
                offset: DVector::zeros(n),
                bundle: None,
            });
        }
        let bundle = smoothing_bundle(model, s, t)?;
        Ok(TransitionKernel {
            s,
            t,
            evolution: bundle.evolution.entries.clone(),
            offset: forcing_offset(model, s, t)?,
            bundle: Some(bundle),
        })
    }

    /// Kernel over `[s, s + gap]` with the gap held exactly. Gaps shorter
    /// than [`SHORT_GAP`] times the horizon use midpoint-frozen coefficients,
    /// since `s + gap` may not be representable apart from `s`.
    pub fn with_gap(model: &OperatorFamily, s: f64, gap: f64) -> Result<Self> {
        if !(gap > 0.0) {
            return Err(Error::NoSmoothing { s, t: s + gap });
        }
        if gap >= SHORT_GAP * model.horizon() {
            return TransitionKernel::new(model, s, s + gap);
        }
        model.check_times(s, s + gap)?;
        let (evolution, law, offset) = frozen_parts(model, s, gap)?;
        let bundle = assemble(s, s + gap, evolution, law, DEFAULT_RANGE_TOL);
        Ok(TransitionKernel {
            s,
            t: s + gap,
            evolution: bundle.evolution.entries.clone(),
            offset,
            bundle: Some(bundle),
        })
    }

    pub fn dimension(&self) -> usize {
        self.offset.len()
    }

    pub fn bundle(&self) -> Option<&SmoothingBundle> {
        self.bundle.as_ref()
    }

    /// `m^x(t, s) = U(t, s) x + g(t, s)`.
    pub fn mean(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.evolution * x + &self.offset
    }

    fn check(&self, phi: &FieldFunction, x: &DVector<f64>, dirs: &[DVector<f64>], budget: &Budget) -> Result<()> {
        let n = self.dimension();
        for len in [phi.dimension(), x.len()].into_iter().chain(dirs.iter().map(|h| h.len())) {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        if dirs.len() > budget.max_order {
            return Err(Error::InvalidParameter(format!(
                "derivative order {} exceeds the configured maximum {}",
                dirs.len(),
                budget.max_order
            )));
        }
        Ok(())
    }

    fn smoothing(&self) -> Result<&SmoothingBundle> {
        let b = self.bundle.as_ref().ok_or(Error::NoSmoothing { s: self.s, t: self.t })?;
        b.require_nondegenerate()?;
        Ok(b)
    }

    fn weight(&self, bundle: &SmoothingBundle, dirs: &[DVector<f64>]) -> PolyWeight {
        let n = self.dimension();
        let mut ell = DMatrix::zeros(n, dirs.len());
        for (i, h) in dirs.iter().enumerate() {
            ell.set_column(i, &(&bundle.lambda_eigen * h));
        }
        PolyWeight::matching(ell)
    }

    /// `P_{s,t} phi (x)`.
    pub fn apply(&self, phi: &FieldFunction, x: &DVector<f64>, method: Method, budget: &Budget) -> Result<MCEstimate> {
        self.check(phi, x, &[], budget)?;
        let m = self.mean(x);
        match &self.bundle {
            None => Ok(MCEstimate::exact(phi.eval(&m), method, budget.seed)),
            Some(b) => expect(phi, &m, &b.law.root, &PolyWeight::unit(m.len()), method, budget),
        }
    }

    /// `D^n P_{s,t} phi (x)(h_1, .., h_n) = E[phi(m^x + y) I_n(y)(h_1, .., h_n)]`.
    pub fn derivative(
        &self,
        phi: &FieldFunction,
        x: &DVector<f64>,
        dirs: &[DVector<f64>],
        method: Method,
        budget: &Budget,
    ) -> Result<MCEstimate> {
        self.mixed(phi, x, &[], dirs, method, budget)
    }

    /// `P_{s,t}[D^k phi(.)(U h_1, .., U h_k)](x)`.
    pub fn transfer(
        &self,
        phi: &FieldFunction,
        x: &DVector<f64>,
        dirs: &[DVector<f64>],
        method: Method,
        budget: &Budget,
    ) -> Result<MCEstimate> {
        self.check(phi, x, dirs, budget)?;
        if phi.analytic_order() < dirs.len() {
            return Err(Error::MissingDerivatives { label: phi.label().to_string(), order: dirs.len() });
        }
        let pushed: Vec<DVector<f64>> = dirs.iter().map(|h| &self.evolution * h).collect();
        let m = self.mean(x);
        match &self.bundle {
            None => Ok(MCEstimate::exact(phi.derivative_value(&m, &pushed)?, method, budget.seed)),
            Some(b) => {
                let field = phi.derivative_field(&pushed)?;
                expect(&field, &m, &b.law.root, &PolyWeight::unit(m.len()), method, budget)
            }
        }
    }

    /// `E[D^k phi(m^x + y)(U h_1, .., U h_k) I_n(y)(g_1, .., g_n)]` with
    /// `transfer_dirs = h` and `weight_dirs = g`.
    pub fn mixed(
        &self,
        phi: &FieldFunction,
        x: &DVector<f64>,
        transfer_dirs: &[DVector<f64>],
        weight_dirs: &[DVector<f64>],
        method: Method,
        budget: &Budget,
    ) -> Result<MCEstimate> {
        let all: Vec<DVector<f64>> = transfer_dirs.iter().chain(weight_dirs).cloned().collect();
        self.check(phi, x, &all, budget)?;
        if weight_dirs.is_empty() {
            return self.transfer(phi, x, transfer_dirs, method, budget);
        }
        let bundle = self.smoothing()?;
        if phi.analytic_order() < transfer_dirs.len() {
            return Err(Error::MissingDerivatives { label: phi.label().to_string(), order: transfer_dirs.len() });
        }
        let pushed: Vec<DVector<f64>> = transfer_dirs.iter().map(|h| &self.evolution * h).collect();
        let field = phi.derivative_field(&pushed)?;
        let m = self.mean(x);
        expect(&field, &m, &bundle.law.root, &self.weight(bundle, weight_dirs), method, budget)
    }
}

/// `P_{s,t} phi (x)`; exactly `phi(x)` when `s = t`.
pub fn apply_p(
    model: &OperatorFamily,
    phi: &FieldFunction,
    s: f64,
    t: f64,
    x: &DVector<f64>,
    method: Method,
    budget: &Budget,
) -> Result<MCEstimate> {
    TransitionKernel::new(model, s, t)?.apply(phi, x, method, budget)
}

/// `D^n P_{s,t} phi (x)(h_1, .., h_n)` through the weight `I_n`.
pub fn derivative_p(
    model: &OperatorFamily,
    phi: &FieldFunction,
    s: f64,
    t: f64,
    x: &DVector<f64>,
    dirs: &[DVector<f64>],
    method: Method,
    budget: &Budget,
) -> Result<MCEstimate> {
    if s >= t {
        return Err(Error::NoSmoothing { s, t });
    }
    TransitionKernel::new(model, s, t)?.derivative(phi, x, dirs, method, budget)
}

/// `D^k P_{s,t} phi (x)(h..)` by moving the derivatives onto `phi`.
pub fn derivative_p_transfer(
    model: &OperatorFamily,
    phi: &FieldFunction,
    s: f64,
    t: f64,
    x: &DVector<f64>,
    dirs: &[DVector<f64>],
    method: Method,
    budget: &Budget,
) -> Result<MCEstimate> {
    TransitionKernel::new(model, s, t)?.transfer(phi, x, dirs, method, budget)
}

/// Mixed representation: `k` derivatives on `phi`, `n` through `I_n`.
#[allow(clippy::too_many_arguments)]
pub fn derivative_p_mixed(
    model: &OperatorFamily,
    phi: &FieldFunction,
    s: f64,
    t: f64,
    x: &DVector<f64>,
    transfer_dirs: &[DVector<f64>],
    weight_dirs: &[DVector<f64>],
    method: Method,
    budget: &Budget,
) -> Result<MCEstimate> {
    if !weight_dirs.is_empty() && s >= t {
        return Err(Error::NoSmoothing { s, t });
    }
    TransitionKernel::new(model, s, t)?.mixed(phi, x, transfer_dirs, weight_dirs, method, budget)
}

/// The weight `I_n(t, s)(y)(h_1, .., h_n)` at a single point `y`.
pub fn weight_i_n(bundle: &SmoothingBundle, y: &DVector<f64>, dirs: &[DVector<f64>]) -> Result<f64> {
    bundle.require_nondegenerate()?;
    let n = bundle.dimension();
    if dirs.is_empty() {
        return Err(Error::InvalidParameter("weight order must be at least 1".into()));
    }
    for len in std::iter::once(y.len()).chain(dirs.iter().map(|h| h.len())) {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    let lh: Vec<DVector<f64>> = dirs.iter().map(|h| &bundle.lambda * h).collect();
    let qy = bundle.law.root.apply_pinv_sqrt(y);
    let w: Vec<f64> = lh.iter().map(|v| v.dot(&qy)).collect();
    let k = dirs.len();
    let mut total = 0.0;
    for pairs in 0..=k / 2 {
        let sign = if pairs % 2 == 0 { 1.0 } else { -1.0 };
        for m in enumerate_partial_matchings(k, pairs)? {
            let g: f64 = m.pairs.iter().map(|(i, j)| lh[*i].dot(&lh[*j])).product();
            let rest: f64 = m.leftover.iter().map(|i| w[*i]).product();
            total += sign * g * rest;
        }
    }
    Ok(total)
}
