use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use super::{FieldFunction, RegularityClass};

type Slice = Arc<dyn Fn(f64) -> FieldFunction + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Stationary(FieldFunction),
    Varying(Slice),
}

/// A source term `psi(sigma, x)`.
#[derive(Clone)]
pub struct SourceTerm {
    label: String,
    dimension: usize,
    class: RegularityClass,
    holder_bound: Option<f64>,
    kind: Kind,
}

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceTerm")
            .field("label", &self.label)
            .field("dimension", &self.dimension)
            .field("class", &self.class)
            .field("holder_bound", &self.holder_bound)
            .finish()
    }
}

impl SourceTerm {
    /// A source that does not depend on time.
    pub fn stationary(field: FieldFunction) -> Self {
        SourceTerm {
            label: field.label().to_string(),
            dimension: field.dimension(),
            class: field.class(),
            holder_bound: field.declared_seminorm(),
            kind: Kind::Stationary(field),
        }
    }

    /// A source given by its time slices `sigma -> psi(sigma, .)`.
    pub fn varying(label: &str, dimension: usize, class: RegularityClass, slice: Slice) -> Self {
        SourceTerm { label: label.to_string(), dimension, class, holder_bound: None, kind: Kind::Varying(slice) }
    }

    pub fn zero(dimension: usize) -> Self {
        Self::stationary(super::constant(dimension, 0.0))
    }

    pub fn with_holder_bound(mut self, bound: f64) -> Self {
        self.holder_bound = Some(bound);
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

    pub fn holder_bound(&self) -> Option<f64> {
        self.holder_bound
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self.kind, Kind::Stationary(_))
    }

    pub fn at(&self, sigma: f64) -> FieldFunction {
        match &self.kind {
            Kind::Stationary(f) => f.clone(),
            Kind::Varying(s) => s(sigma),
        }
    }

    pub fn eval(&self, sigma: f64, x: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Stationary(f) => f.eval(x),
            Kind::Varying(s) => s(sigma).eval(x),
        }
    }

    pub fn scaled(&self, c: f64) -> SourceTerm {
        let kind = match &self.kind {
            Kind::Stationary(f) => Kind::Stationary(f.scaled(c)),
            Kind::Varying(s) => {
                let s = s.clone();
                Kind::Varying(Arc::new(move |sigma| s(sigma).scaled(c)))
            }
        };
        SourceTerm { holder_bound: self.holder_bound.map(|b| b * c.abs()), kind, ..self.clone() }
    }
}
