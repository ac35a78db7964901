use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time pair ({s}, {t}) violates 0 <= s <= t <= {horizon}")]
    Horizon { s: f64, t: f64, horizon: f64 },

    #[error("expected s < t strictly, got s = {s}, t = {t}")]
    NoSmoothing { s: f64, t: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("integrator did not converge: cocycle defect {achieved:e} > tolerance {tolerance:e} at {steps} steps")]
    IntegratorNonConvergence { achieved: f64, tolerance: f64, steps: usize },

    #[error("quadrature did not converge: last relative change {achieved:e}")]
    QuadratureNonConvergence { achieved: f64 },

    #[error("matrix is not symmetric: asymmetry {asymmetry:e} relative to norm {norm:e}")]
    NotSymmetric { asymmetry: f64, norm: f64 },

    #[error("matrix has a significantly negative eigenvalue {eigenvalue:e} (trace {trace:e})")]
    NegativeSpectrum { eigenvalue: f64, trace: f64 },

    #[error("smoothing bundle at ({s}, {t}) is degenerate: range residual {residual:e} exceeds {tolerance:e}")]
    DegenerateBundle { s: f64, t: f64, residual: f64, tolerance: f64 },

    #[error("field `{label}` lacks analytic derivatives of order {order}")]
    MissingDerivatives { label: String, order: usize },

    #[error("pair count {pairs} exceeds the maximum {max} for n = {n}")]
    TooManyPairs { n: usize, pairs: usize, max: usize },

    #[error("graded time mesh exponent {gamma} is not integrable (need gamma < 1)")]
    NonIntegrable { gamma: f64 },

    #[error("not enough modes: N^a * dt_min = {reach:e} is below the saturation window start {window:e}")]
    InsufficientModes { reach: f64, window: f64 },

    #[error("sweep needs at least {need} time pairs spanning two decades, got {got}")]
    InsufficientSweep { need: usize, got: usize },

    #[error("exponent {exponent} is within {margin} of an integer; use the Zygmund suite")]
    NearIntegerExponent { exponent: f64, margin: f64 },

    #[error("exponent {exponent} is not within {margin} of an integer; use the Schauder suite")]
    NotBorderline { exponent: f64, margin: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("model description: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
