//! Time-dependent coefficient families `(A(t), B(t), f(t))` and the
//! evolution operator `U(t, s)` they generate.

mod description;
mod example1;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

pub use description::{DenseTable, ModelSpec, ScalarParams};
pub use example1::{make_example1, DiagonalModel, Example1Params};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;
pub type PropagatorFn = Arc<dyn Fn(f64, f64) -> DMatrix<f64> + Send + Sync>;

/// Default tolerance on the cocycle defect of the RK4 propagator.
pub const DEFAULT_INTEGRATOR_TOLERANCE: f64 = 1e-11;
const MAX_RK4_STEPS: usize = 1 << 20;
const PROFILE_ABS_TOL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// `A(t) = a(t) I`, `B(t) = b(t) I`.
    Scalar,
    Diagonal,
    Dense,
}

/// Per-mode coefficients `alpha_k(t)`, `beta_k(t)` of a diagonal family.
#[derive(Clone)]
pub enum ModeCoefficients {
    /// `alpha_k(t) = drift_scale[k] * drift_profile(t)` and likewise for beta.
    Separable {
        drift_scale: Vec<f64>,
        drift_profile: ScalarFn,
        diffusion_scale: Vec<f64>,
        diffusion_profile: ScalarFn,
    },
    PerMode {
        drift: Vec<ScalarFn>,
        diffusion: Vec<ScalarFn>,
    },
}

impl ModeCoefficients {
    pub fn len(&self) -> usize {
        match self {
            ModeCoefficients::Separable { drift_scale, .. } => drift_scale.len(),
            ModeCoefficients::PerMode { drift, .. } => drift.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn drift(&self, k: usize, t: f64) -> f64 {
        match self {
            ModeCoefficients::Separable { drift_scale, drift_profile, .. } => {
                drift_scale[k] * drift_profile(t)
            }
            ModeCoefficients::PerMode { drift, .. } => drift[k](t),
        }
    }

    pub fn diffusion(&self, k: usize, t: f64) -> f64 {
        match self {
            ModeCoefficients::Separable { diffusion_scale, diffusion_profile, .. } => {
                diffusion_scale[k] * diffusion_profile(t)
            }
            ModeCoefficients::PerMode { diffusion, .. } => diffusion[k](t),
        }
    }

    pub fn diffusion_all(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.len(), (0..self.len()).map(|k| self.diffusion(k, t)))
    }

    /// `int_s^t alpha_k(tau) dtau` for every mode.
    pub fn drift_integrals(&self, s: f64, t: f64) -> DVector<f64> {
        if t == s {
            return DVector::zeros(self.len());
        }
        match self {
            ModeCoefficients::Separable { drift_scale, drift_profile, .. } => {
                let (p, _) = quadrature::adaptive(|x| drift_profile(x), s, t, PROFILE_ABS_TOL, 1e-15);
                DVector::from_iterator(drift_scale.len(), drift_scale.iter().map(|c| c * p))
            }
            ModeCoefficients::PerMode { drift, .. } => DVector::from_iterator(
                drift.len(),
                drift.iter().map(|a| quadrature::adaptive(|x| a(x), s, t, 1e-12, 1e-15).0),
            ),
        }
    }
}

enum Coefficients {
    Modal(ModeCoefficients),
    Dense {
        drift: MatrixFn,
        diffusion: MatrixFn,
        closed_form: Option<PropagatorFn>,
    },
}

/// A time-dependent Ornstein–Uhlenbeck coefficient triple on `R^N`.
#[derive(Clone)]
pub struct OperatorFamily {
    label: String,
    dimension: usize,
    horizon: f64,
    structure: Structure,
    coefficients: Arc<Coefficients>,
    forcing: Option<VectorFn>,
    tolerance: f64,
}

impl fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorFamily")
            .field("label", &self.label)
            .field("dimension", &self.dimension)
            .field("horizon", &self.horizon)
            .field("structure", &self.structure)
            .field("forced", &self.forcing.is_some())
            .finish()
    }
}

impl OperatorFamily {
    /// `A(t) = a(t) I_N`, `B(t) = b(t) I_N`.
    pub fn scalar(label: &str, dimension: usize, horizon: f64, drift: ScalarFn, diffusion: ScalarFn) -> Result<Self> {
        check_shape(dimension, horizon)?;
        let coefficients = ModeCoefficients::Separable {
            drift_scale: vec![1.0; dimension],
            drift_profile: drift,
            diffusion_scale: vec![1.0; dimension],
            diffusion_profile: diffusion,
        };
        Ok(OperatorFamily {
            label: label.to_string(),
            dimension,
            horizon,
            structure: Structure::Scalar,
            coefficients: Arc::new(Coefficients::Modal(coefficients)),
            forcing: None,
            tolerance: DEFAULT_INTEGRATOR_TOLERANCE,
        })
    }

    /// Time-independent scalar model `A = a I`, `B = b I`.
    pub fn scalar_constant(label: &str, dimension: usize, horizon: f64, a: f64, b: f64) -> Result<Self> {
        Self::scalar(label, dimension, horizon, Arc::new(move |_| a), Arc::new(move |_| b))
    }

    pub fn diagonal(label: &str, horizon: f64, modes: ModeCoefficients) -> Result<Self> {
        check_shape(modes.len(), horizon)?;
        Ok(OperatorFamily {
            label: label.to_string(),
            dimension: modes.len(),
            horizon,
            structure: Structure::Diagonal,
            coefficients: Arc::new(Coefficients::Modal(modes)),
            forcing: None,
            tolerance: DEFAULT_INTEGRATOR_TOLERANCE,
        })
    }

    pub fn dense(label: &str, dimension: usize, horizon: f64, drift: MatrixFn, diffusion: MatrixFn) -> Result<Self> {
        check_shape(dimension, horizon)?;
        for (name, m) in [("drift", drift(0.0)), ("diffusion", diffusion(0.0))] {
            if m.nrows() != dimension || m.ncols() != dimension {
                return Err(Error::Model(format!(
                    "{name} evaluates to {}x{}, expected {dimension}x{dimension}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(OperatorFamily {
            label: label.to_string(),
            dimension,
            horizon,
            structure: Structure::Dense,
            coefficients: Arc::new(Coefficients::Dense { drift, diffusion, closed_form: None }),
            forcing: None,
            tolerance: DEFAULT_INTEGRATOR_TOLERANCE,
        })
    }

    pub fn with_forcing(mut self, forcing: VectorFn) -> Result<Self> {
        let f0 = forcing(0.0);
        if f0.len() != self.dimension {
            return Err(Error::Dimension { expected: self.dimension, got: f0.len() });
        }
        self.forcing = Some(forcing);
        Ok(self)
    }

    /// Attach an exact propagator `(s, t) -> U(t, s)` to a dense family.
    pub fn with_closed_form(mut self, propagator: PropagatorFn) -> Self {
        if let Coefficients::Dense { drift, diffusion, .. } = &*self.coefficients {
            self.coefficients = Arc::new(Coefficients::Dense {
                drift: drift.clone(),
                diffusion: diffusion.clone(),
                closed_form: Some(propagator),
            });
        }
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn integrator_tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn has_forcing(&self) -> bool {
        self.forcing.is_some()
    }

    /// Per-mode coefficients, for scalar and diagonal families.
    pub fn modes(&self) -> Option<&ModeCoefficients> {
        match &*self.coefficients {
            Coefficients::Modal(m) => Some(m),
            Coefficients::Dense { .. } => None,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        match &*self.coefficients {
            Coefficients::Modal(_) => true,
            Coefficients::Dense { closed_form, .. } => closed_form.is_some(),
        }
    }

    pub fn drift(&self, t: f64) -> DMatrix<f64> {
        match &*self.coefficients {
            Coefficients::Modal(m) => {
                DMatrix::from_diagonal(&DVector::from_iterator(m.len(), (0..m.len()).map(|k| m.drift(k, t))))
            }
            Coefficients::Dense { drift, .. } => drift(t),
        }
    }

    pub fn diffusion(&self, t: f64) -> DMatrix<f64> {
        match &*self.coefficients {
            Coefficients::Modal(m) => DMatrix::from_diagonal(&m.diffusion_all(t)),
            Coefficients::Dense { diffusion, .. } => diffusion(t),
        }
    }

    pub fn forcing(&self, t: f64) -> DVector<f64> {
        match &self.forcing {
            Some(f) => f(t),
            None => DVector::zeros(self.dimension),
        }
    }

    pub(crate) fn check_times(&self, s: f64, t: f64) -> Result<()> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(s >= -slack && s <= t && t <= self.horizon + slack) || !s.is_finite() || !t.is_finite() {
            return Err(Error::Horizon { s, t, horizon: self.horizon });
        }
        Ok(())
    }

    /// Suprema of `|B(t)|`, `|f(t)|` and `|U(t, s)|` over a uniform grid of
    /// `points` times in `[0, T]`.
    pub fn bounds(&self, points: usize) -> Result<HypothesisBounds> {
        let points = points.max(2);
        let grid: Vec<f64> = (0..points).map(|i| self.horizon * i as f64 / (points - 1) as f64).collect();
        let mut sup_diffusion: f64 = 0.0;
        let mut sup_forcing: f64 = 0.0;
        for &t in &grid {
            sup_diffusion = sup_diffusion.max(crate::linalg::op_norm(&self.diffusion(t)));
            sup_forcing = sup_forcing.max(self.forcing(t).amax());
        }
        let mut sup_evolution: f64 = 0.0;
        let coarse: Vec<f64> = grid.iter().step_by((points / 12).max(1)).copied().collect();
        for (i, &s) in coarse.iter().enumerate() {
            for &t in &coarse[i..] {
                let u = evolve(self, s, t)?;
                sup_evolution = sup_evolution.max(crate::linalg::op_norm(&u.entries));
            }
        }
        Ok(HypothesisBounds { sup_diffusion, sup_forcing, sup_evolution })
    }
}

fn check_shape(dimension: usize, horizon: f64) -> Result<()> {
    if dimension == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// Empirical bounds recorded for a family: `sup |B|`, `sup |f|` and the
/// evolution bound `M_emp >= |U(t, s)|`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HypothesisBounds {
    pub sup_diffusion: f64,
    pub sup_forcing: f64,
    pub sup_evolution: f64,
}

/// `U(t, s)` for a fixed pair, with the achieved cocycle defect.
#[derive(Debug, Clone)]
pub struct EvolutionMatrix {
    pub s: f64,
    pub t: f64,
    pub entries: DMatrix<f64>,
    pub tolerance: f64,
    pub defect: f64,
    pub steps: usize,
}

/// Diagonal of `U(t, s)` for scalar and diagonal families.
pub(crate) fn modal_evolution(modes: &ModeCoefficients, s: f64, t: f64) -> DVector<f64> {
    modes.drift_integrals(s, t).map(f64::exp)
}

/// Evolution operator `U(t, s)`: closed form when available, otherwise RK4
/// on `dU/dt = A(t) U` with step halving on the cocycle defect.
pub fn evolve(model: &OperatorFamily, s: f64, t: f64) -> Result<EvolutionMatrix> {
    model.check_times(s, t)?;
    let n = model.dimension;
    if s == t {
        return Ok(EvolutionMatrix {
            s,
            t,
            entries: DMatrix::identity(n, n),
            tolerance: model.tolerance,
            defect: 0.0,
            steps: 0,
        });
    }
    match &*model.coefficients {
        Coefficients::Modal(modes) => Ok(EvolutionMatrix {
            s,
            t,
            entries: DMatrix::from_diagonal(&modal_evolution(modes, s, t)),
            tolerance: model.tolerance,
            defect: 0.0,
            steps: 0,
        }),
        Coefficients::Dense { closed_form: Some(u), .. } => Ok(EvolutionMatrix {
            s,
            t,
            entries: u(s, t),
            tolerance: model.tolerance,
            defect: 0.0,
            steps: 0,
        }),
        Coefficients::Dense { drift, .. } => integrate_dense(drift, n, s, t, model.tolerance),
    }
}

fn rk4(drift: &MatrixFn, n: usize, s: f64, t: f64, steps: usize) -> DMatrix<f64> {
    let mut u = DMatrix::<f64>::identity(n, n);
    let h = (t - s) / steps as f64;
    for i in 0..steps {
        let tau = s + h * i as f64;
        let a0 = drift(tau);
        let am = drift(tau + 0.5 * h);
        let a1 = drift(tau + h);
        let k1 = &a0 * &u;
        let k2 = &am * (&u + &k1 * (0.5 * h));
        let k3 = &am * (&u + &k2 * (0.5 * h));
        let k4 = &a1 * (&u + &k3 * h);
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    u
}

// Golden-section split point, never aligned with a dyadic step grid.
const SPLIT: f64 = 0.381_966_011_250_105_1;

fn integrate_dense(drift: &MatrixFn, n: usize, s: f64, t: f64, tol: f64) -> Result<EvolutionMatrix> {
    let r = s + SPLIT * (t - s);
    let mut steps = 8;
    let mut last_defect = f64::INFINITY;
    while steps <= MAX_RK4_STEPS {
        let full = rk4(drift, n, s, t, steps);
        // both halves get the full step count, so their step sizes differ
        // from the single run and the defect tracks the actual error
        let left = rk4(drift, n, s, r, steps);
        let right = rk4(drift, n, r, t, steps);
        let defect = (&full - right * left).amax();
        if defect <= tol {
            return Ok(EvolutionMatrix { s, t, entries: full, tolerance: tol, defect, steps });
        }
        last_defect = defect;
        steps *= 2;
    }
    Err(Error::IntegratorNonConvergence { achieved: last_defect, tolerance: tol, steps: steps / 2 })
}

/// `max |U(t, s) - U(t, r) U(r, s)|` for `s <= r <= t`.
pub fn cocycle_defect(model: &OperatorFamily, s: f64, r: f64, t: f64) -> Result<f64> {
    let full = evolve(model, s, t)?;
    let left = evolve(model, s, r)?;
    let right = evolve(model, r, t)?;
    Ok((&full.entries - &right.entries * &left.entries).amax())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_ou() -> OperatorFamily {
        OperatorFamily::scalar_constant("scalarOU", 1, 2.0, -1.0, 1.0).unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        let u = evolve(&scalar_ou(), 0.0, 1.0).unwrap();
        assert!((u.entries[(0, 0)] - (-1f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn identity_on_diagonal_times() {
        let u = evolve(&scalar_ou(), 0.7, 0.7).unwrap();
        assert_eq!(u.entries, DMatrix::identity(1, 1));
    }

    #[test]
    fn horizon_violation_rejected() {
        assert!(matches!(evolve(&scalar_ou(), 0.5, 0.2), Err(Error::Horizon { .. })));
        assert!(matches!(evolve(&scalar_ou(), 0.0, 2.5), Err(Error::Horizon { .. })));
        assert!(matches!(evolve(&scalar_ou(), -0.1, 0.5), Err(Error::Horizon { .. })));
    }

    #[test]
    fn dense_rk4_matches_matrix_exponential_of_commuting_drift() {
        // constant drift: U = exp(A (t - s)); compare with a truncated series
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -2.0]);
        let a2 = a.clone();
        let model = OperatorFamily::dense(
            "const",
            2,
            1.0,
            Arc::new(move |_| a2.clone()),
            Arc::new(|_| DMatrix::identity(2, 2)),
        )
        .unwrap();
        let u = evolve(&model, 0.1, 0.9).unwrap();
        let mut series = DMatrix::<f64>::identity(2, 2);
        let mut term = DMatrix::<f64>::identity(2, 2);
        for k in 1..40 {
            term = &term * &a * (0.8 / k as f64);
            series += &term;
        }
        assert!((u.entries - series).amax() < 1e-10);
        assert!(u.defect <= DEFAULT_INTEGRATOR_TOLERANCE);
    }

    #[test]
    fn bounds_are_recorded() {
        let b = scalar_ou().bounds(50).unwrap();
        assert!((b.sup_diffusion - 1.0).abs() < 1e-14);
        assert_eq!(b.sup_forcing, 0.0);
        assert!((b.sup_evolution - 1.0).abs() < 1e-14);
    }
}
