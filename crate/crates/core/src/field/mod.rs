//! Scalar fields on state space with declared regularity and optional
//! analytic derivatives, plus time-dependent source terms.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScalarFn;

pub type Eval = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// `(x, [h_1, .., h_k]) -> D^k phi(x)(h_1, .., h_k)`.
pub type DerivEval = Arc<dyn Fn(&DVector<f64>, &[DVector<f64>]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", content = "order", rename_all = "lowercase")]
pub enum RegularityClass {
    /// Bounded measurable.
    Bb,
    /// Hölder continuous with exponent in `(0, 1]`.
    Calpha(f64),
    /// `k` bounded continuous derivatives.
    Ck(usize),
    /// Zygmund class of order `k`.
    Zk(usize),
}

/// A one-dimensional profile `psi` with known derivatives
/// `[psi, psi', psi'', ..]` and the points where it fails to be smooth.
#[derive(Clone)]
pub struct Profile {
    pub derivatives: Vec<ScalarFn>,
    pub breaks: Vec<f64>,
}

impl Profile {
    pub fn new(derivatives: Vec<ScalarFn>, breaks: Vec<f64>) -> Self {
        assert!(!derivatives.is_empty(), "profile needs at least its value");
        Profile { derivatives, breaks }
    }

    pub fn value(&self, v: f64) -> f64 {
        (self.derivatives[0])(v)
    }

    fn constant(c: f64) -> Self {
        let zero: ScalarFn = Arc::new(|_| 0.0);
        Profile { derivatives: vec![Arc::new(move |_| c), zero.clone(), zero.clone(), zero.clone(), zero], breaks: vec![] }
    }

    /// `scale * psi^{(k + j)}` as a new profile.
    fn shifted(&self, k: usize, scale: f64) -> Option<Profile> {
        if self.derivatives.len() <= k {
            return None;
        }
        let derivatives = self.derivatives[k..]
            .iter()
            .map(|d| {
                let d = d.clone();
                Arc::new(move |v| scale * d(v)) as ScalarFn
            })
            .collect();
        Some(Profile { derivatives, breaks: self.breaks.clone() })
    }
}

/// Structure the Gaussian expectation engine can exploit.
#[derive(Clone)]
pub enum Shape {
    General,
    /// `phi(x) = psi(<c, x>)`.
    Ridge { direction: DVector<f64>, profile: Profile },
    /// `phi(x) = prod_k psi_k(x_k)`.
    Product(Vec<Profile>),
}

/// A scalar field `phi: R^N -> R`.
#[derive(Clone)]
pub struct FieldFunction {
    label: String,
    dimension: usize,
    class: RegularityClass,
    seminorm: Option<f64>,
    sup: Option<f64>,
    eval: Eval,
    derivatives: Vec<DerivEval>,
    shape: Shape,
}

impl fmt::Debug for FieldFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldFunction")
            .field("label", &self.label)
            .field("dimension", &self.dimension)
            .field("class", &self.class)
            .field("seminorm", &self.seminorm)
            .field("analytic_order", &self.analytic_order())
            .finish()
    }
}

impl FieldFunction {
    pub fn new(label: &str, dimension: usize, class: RegularityClass, eval: Eval) -> Self {
        FieldFunction {
            label: label.to_string(),
            dimension,
            class,
            seminorm: None,
            sup: None,
            eval,
            derivatives: Vec::new(),
            shape: Shape::General,
        }
    }

    /// `phi(x) = psi(<c, x>)`; derivatives follow from those of the profile.
    pub fn ridge(label: &str, class: RegularityClass, direction: DVector<f64>, profile: Profile) -> Self {
        let dimension = direction.len();
        let c = direction.clone();
        let p = profile.derivatives[0].clone();
        FieldFunction {
            label: label.to_string(),
            dimension,
            class,
            seminorm: None,
            sup: None,
            eval: Arc::new(move |x| p(c.dot(x))),
            derivatives: Vec::new(),
            shape: Shape::Ridge { direction, profile },
        }
    }

    /// `phi(x) = prod_k psi_k(x_k)`.
    pub fn product(label: &str, class: RegularityClass, factors: Vec<Profile>) -> Self {
        let dimension = factors.len();
        let fs: Vec<ScalarFn> = factors.iter().map(|p| p.derivatives[0].clone()).collect();
        FieldFunction {
            label: label.to_string(),
            dimension,
            class,
            seminorm: None,
            sup: None,
            eval: Arc::new(move |x| fs.iter().enumerate().map(|(k, f)| f(x[k])).product()),
            derivatives: Vec::new(),
            shape: Shape::Product(factors),
        }
    }

    pub fn with_derivatives(mut self, derivatives: Vec<DerivEval>) -> Self {
        self.derivatives = derivatives;
        self
    }

    pub fn with_seminorm(mut self, seminorm: f64) -> Self {
        self.seminorm = Some(seminorm);
        self
    }

    pub fn with_sup(mut self, sup: f64) -> Self {
        self.sup = Some(sup);
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn class(&self) -> RegularityClass {
        self.class
    }

    pub fn declared_seminorm(&self) -> Option<f64> {
        self.seminorm
    }

    pub fn declared_sup(&self) -> Option<f64> {
        self.sup
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        (self.eval)(x)
    }

    pub fn evaluator(&self) -> Eval {
        self.eval.clone()
    }

    /// Highest order of available analytic derivatives.
    pub fn analytic_order(&self) -> usize {
        match &self.shape {
            Shape::Ridge { profile, .. } => profile.derivatives.len() - 1,
            _ => self.derivatives.len(),
        }
    }

    /// `D^k phi(x)(h_1, .., h_k)`.
    pub fn derivative_value(&self, x: &DVector<f64>, dirs: &[DVector<f64>]) -> Result<f64> {
        let k = dirs.len();
        if k == 0 {
            return Ok(self.eval(x));
        }
        if let Shape::Ridge { direction, profile } = &self.shape {
            if let Some(d) = profile.derivatives.get(k) {
                let scale: f64 = dirs.iter().map(|h| direction.dot(h)).product();
                return Ok(scale * d(direction.dot(x)));
            }
        }
        match self.derivatives.get(k - 1) {
            Some(d) => Ok(d(x, dirs)),
            None => Err(Error::MissingDerivatives { label: self.label.clone(), order: k }),
        }
    }

    /// The field `x -> D^k phi(x)(h_1, .., h_k)`, keeping ridge structure.
    pub fn derivative_field(&self, dirs: &[DVector<f64>]) -> Result<FieldFunction> {
        let k = dirs.len();
        if k == 0 {
            return Ok(self.clone());
        }
        let label = format!("D{k}[{}]", self.label);
        if let Shape::Ridge { direction, profile } = &self.shape {
            let scale: f64 = dirs.iter().map(|h| direction.dot(h)).product();
            if let Some(p) = profile.shifted(k, scale) {
                return Ok(FieldFunction::ridge(&label, RegularityClass::Bb, direction.clone(), p));
            }
        }
        let d = self
            .derivatives
            .get(k - 1)
            .cloned()
            .ok_or_else(|| Error::MissingDerivatives { label: self.label.clone(), order: k })?;
        let dirs = dirs.to_vec();
        let rest: Vec<DerivEval> = self.derivatives[k..]
            .iter()
            .map(|higher| {
                let higher = higher.clone();
                let base = dirs.clone();
                Arc::new(move |x: &DVector<f64>, more: &[DVector<f64>]| {
                    let mut all = base.clone();
                    all.extend_from_slice(more);
                    higher(x, &all)
                }) as DerivEval
            })
            .collect();
        Ok(FieldFunction::new(&label, self.dimension, RegularityClass::Bb, Arc::new(move |x| d(x, &dirs)))
            .with_derivatives(rest))
    }

    /// Re-expresses a one-dimensional field as a ridge function so the
    /// expectation engine can integrate it exactly in one variable.
    pub fn as_ridge(&self) -> Option<(DVector<f64>, Profile)> {
        match &self.shape {
            Shape::Ridge { direction, profile } => Some((direction.clone(), profile.clone())),
            Shape::Product(f) if f.len() == 1 => Some((DVector::from_element(1, 1.0), f[0].clone())),
            _ if self.dimension == 1 => {
                let e = self.eval.clone();
                let mut derivs: Vec<ScalarFn> = vec![Arc::new(move |v| e(&DVector::from_element(1, v)))];
                for (i, d) in self.derivatives.iter().enumerate() {
                    let d = d.clone();
                    let ones = vec![DVector::from_element(1, 1.0); i + 1];
                    derivs.push(Arc::new(move |v| d(&DVector::from_element(1, v), &ones)));
                }
                Some((DVector::from_element(1, 1.0), Profile::new(derivs, Vec::new())))
            }
            _ => None,
        }
    }

    /// `c * phi`.
    pub fn scaled(&self, c: f64) -> FieldFunction {
        let e = self.eval.clone();
        let derivatives = self
            .derivatives
            .iter()
            .map(|d| {
                let d = d.clone();
                Arc::new(move |x: &DVector<f64>, h: &[DVector<f64>]| c * d(x, h)) as DerivEval
            })
            .collect();
        let shape = match &self.shape {
            Shape::General => Shape::General,
            Shape::Ridge { direction, profile } => Shape::Ridge {
                direction: direction.clone(),
                profile: profile.shifted(0, c).expect("profile has a value"),
            },
            Shape::Product(f) => {
                let mut f = f.clone();
                f[0] = f[0].shifted(0, c).expect("profile has a value");
                Shape::Product(f)
            }
        };
        FieldFunction {
            label: format!("{c}*{}", self.label),
            dimension: self.dimension,
            class: self.class,
            seminorm: self.seminorm.map(|s| s * c.abs()),
            sup: self.sup.map(|s| s * c.abs()),
            eval: Arc::new(move |x| c * e(x)),
            derivatives,
            shape,
        }
    }
}

mod builtins;
mod source;

pub use builtins::*;
pub use source::SourceTerm;
