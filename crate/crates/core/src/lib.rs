//! Numerical engine for nonautonomous Ornstein–Uhlenbeck transition
//! operators.

pub mod error;
pub mod field;
pub mod gaussian;
pub mod kolmogorov;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod regularity;
pub mod rng;
pub mod sde;
pub mod transition;

pub use error::{Error, Result};
pub use gaussian::{
    covariance, cm_weight, mean, psd_sqrt, sample, smoothing_bundle, trace_truncation_curve, GaussianLaw, PsdRoot,
    SmoothingBundle,
};
pub use model::{
    cocycle_defect, evolve, make_example1, DiagonalModel, EvolutionMatrix, Example1Params, ModeCoefficients,
    ModelSpec, OperatorFamily, Structure,
};
pub use field::{FieldFunction, RegularityClass, SourceTerm};
pub use regularity::{
    estimate_theta, holder_seminorm, interpolation_check, schauder_suite, smoothing_suite, theta_optimality,
    zygmund_seminorm, zygmund_suite, ProbeSet, ProbeSettings, SeminormReport, Verdict,
};
pub use sde::{law_check, simulate, weak_check, LawReport, PathEnsemble, WeakRecord};
pub use transition::{
    apply_p, derivative_p, derivative_p_mixed, derivative_p_transfer, enumerate_partial_matchings, weight_i_n, Budget,
    MCEstimate, Method, TransitionKernel,
};
