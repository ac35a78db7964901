//! Experiment configuration: JSON schema, validation and default
//! materialization.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use ouflow_core::field::{self, Monomial};
use ouflow_core::{Budget, Example1Params, FieldFunction, Method, ModelSpec, OperatorFamily, ProbeSettings};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub suite: SuiteConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub budget: Budget,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_method() -> Method {
    Method::TensorQuadrature
}

/// Test functions and sources by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    Linear { c: Vec<f64> },
    Quadratic { m: Vec<Vec<f64>> },
    Cosine { c: Vec<f64> },
    Sine { c: Vec<f64> },
    HolderCusp { alpha: f64, #[serde(default)] center: Option<Vec<f64>> },
    Absolute { c: Vec<f64> },
    Halfspace { c: Vec<f64>, #[serde(default)] offset: f64 },
    QuadrantSign {},
    Polynomial { terms: Vec<Monomial> },
}

impl FieldSpec {
    pub fn zero() -> Self {
        FieldSpec::Constant { value: 0.0 }
    }

    pub fn build(&self, dim: usize) -> Result<FieldFunction, CliError> {
        let vector = |name: &str, c: &[f64]| -> Result<DVector<f64>, CliError> {
            if c.len() != dim {
                return Err(CliError::config(format!("field `{name}` needs {dim} coefficients, got {}", c.len())));
            }
            Ok(DVector::from_column_slice(c))
        };
        Ok(match self {
            FieldSpec::Constant { value } => field::constant(dim, *value),
            FieldSpec::Linear { c } => field::linear(vector("linear", c)?),
            FieldSpec::Quadratic { m } => {
                if m.len() != dim || m.iter().any(|r| r.len() != dim) {
                    return Err(CliError::config(format!("field `quadratic` needs a {dim}x{dim} matrix")));
                }
                field::quadratic(DMatrix::from_fn(dim, dim, |i, j| m[i][j]))
            }
            FieldSpec::Cosine { c } => field::cosine(vector("cosine", c)?),
            FieldSpec::Sine { c } => field::sine(vector("sine", c)?),
            FieldSpec::HolderCusp { alpha, center } => {
                if !(*alpha > 0.0 && *alpha <= 1.0) {
                    return Err(CliError::config(format!("holderCusp exponent must lie in (0, 1], got {alpha}")));
                }
                let x0 = match center {
                    Some(c) => vector("holderCusp", c)?,
                    None => DVector::zeros(dim),
                };
                field::holder_cusp(*alpha, x0)
            }
            FieldSpec::Absolute { c } => field::absolute(vector("absolute", c)?),
            FieldSpec::Halfspace { c, offset } => field::halfspace(vector("halfspace", c)?, *offset),
            FieldSpec::QuadrantSign {} => field::quadrant_sign(dim),
            FieldSpec::Polynomial { terms } => {
                if terms.iter().any(|t| t.powers.len() != dim) {
                    return Err(CliError::config(format!("polynomial monomials need {dim} powers")));
                }
                field::polynomial(dim, terms.clone())
            }
        })
    }
}

/// Pairs `(t - dt, t)` with `dt` log-spaced in `[dtMin, dtMax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct Sweep {
    pub t: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub count: usize,
}

impl Sweep {
    fn check(&self, horizon: f64) -> Result<(), CliError> {
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max && self.dt_max <= self.t && self.t <= horizon) {
            return Err(CliError::config(format!(
                "sweep needs 0 < dtMin < dtMax <= t <= T, got dtMin = {}, dtMax = {}, t = {}, T = {horizon}",
                self.dt_min, self.dt_max, self.t
            )));
        }
        if self.count < 2 {
            return Err(CliError::config("sweep needs at least two pairs"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum SuiteConfig {
    Theta(ThetaSuite),
    Smoothing(SmoothingSuite),
    Schauder(RegularitySuite),
    Zygmund(RegularitySuite),
    Interpolation(InterpolationSuite),
    Sde(SdeSuite),
    Solve(SolveSuite),
    Residual(ResidualSuite),
}

impl SuiteConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SuiteConfig::Theta(_) => "theta",
            SuiteConfig::Smoothing(_) => "smoothing",
            SuiteConfig::Schauder(_) => "schauder",
            SuiteConfig::Zygmund(_) => "zygmund",
            SuiteConfig::Interpolation(_) => "interpolation",
            SuiteConfig::Sde(_) => "sde",
            SuiteConfig::Solve(_) => "solve",
            SuiteConfig::Residual(_) => "residual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct ThetaSuite {
    pub sweep: Sweep,
    /// Exponent the fit is compared with; filled from the model when known.
    pub expected: Option<f64>,
    pub tolerance: f64,
    /// Also fit the lower envelope (diagonal models only).
    pub optimality: bool,
    pub jitter: usize,
}

impl Default for ThetaSuite {
    fn default() -> Self {
        ThetaSuite {
            sweep: Sweep { t: 1.0, dt_min: 1e-4, dt_max: 1e-1, count: 12 },
            expected: None,
            tolerance: 0.05,
            optimality: false,
            jitter: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SmoothingSuite {
    pub fields: Vec<FieldSpec>,
    pub sweep: Sweep,
    pub max_order: usize,
    pub extremal: bool,
    pub offsets: usize,
}

impl Default for SmoothingSuite {
    fn default() -> Self {
        SmoothingSuite {
            fields: Vec::new(),
            sweep: Sweep { t: 1.0, dt_min: 1e-3, dt_max: 1e-1, count: 5 },
            max_order: 3,
            extremal: true,
            offsets: 25,
        }
    }
}

/// Shared by the Schauder and Zygmund suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct RegularitySuite {
    pub phi: FieldSpec,
    pub psi: FieldSpec,
    pub alpha: f64,
    pub theta: Option<f64>,
    pub t: f64,
    pub s_grid: Vec<f64>,
    pub probes: ProbeSettings,
    pub floor: f64,
    /// Schauder: require the sharpness probe to grow. Zygmund: require the
    /// second-derivative proxy to grow.
    pub require_contrast: bool,
}

impl Default for RegularitySuite {
    fn default() -> Self {
        RegularitySuite {
            phi: FieldSpec::zero(),
            psi: FieldSpec::zero(),
            alpha: 0.0,
            theta: None,
            t: 1.0,
            s_grid: (0..8).map(|i| 0.1 * i as f64).collect(),
            probes: ProbeSettings::default(),
            floor: 1e-10,
            require_contrast: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct InterpolationSuite {
    pub fields: Vec<FieldSpec>,
    pub exponents: [f64; 3],
    pub probes: ProbeSettings,
    pub max_constant: f64,
}

impl Default for InterpolationSuite {
    fn default() -> Self {
        InterpolationSuite {
            fields: Vec::new(),
            exponents: [0.0, 0.5, 1.0],
            probes: ProbeSettings::default(),
            max_constant: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct WeakRatioConfig {
    pub dt: f64,
    pub paths: usize,
    pub window: [f64; 2],
}

impl Default for WeakRatioConfig {
    fn default() -> Self {
        WeakRatioConfig { dt: 0.1, paths: 1_000_000, window: [1.5, 2.8] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SdeSuite {
    /// Start point; zero when omitted.
    pub x: Option<Vec<f64>>,
    pub s: f64,
    pub t: f64,
    pub dt: f64,
    pub paths: usize,
    pub fields: Vec<FieldSpec>,
    pub weak_ratio: Option<WeakRatioConfig>,
    /// Persist the terminal states as `ensemble.bin`.
    pub save_ensemble: bool,
}

impl Default for SdeSuite {
    fn default() -> Self {
        SdeSuite {
            x: None,
            s: 0.0,
            t: 1.0,
            dt: 1e-3,
            paths: 100_000,
            fields: Vec::new(),
            weak_ratio: None,
            save_ensemble: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SolveSuite {
    pub phi: FieldSpec,
    pub psi: FieldSpec,
    pub t: f64,
    pub s_grid: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl Default for SolveSuite {
    fn default() -> Self {
        SolveSuite { phi: FieldSpec::zero(), psi: FieldSpec::zero(), t: 1.0, s_grid: vec![0.0, 0.5], points: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct ResidualSuite {
    pub phi: FieldSpec,
    pub psi: FieldSpec,
    pub t: f64,
    pub s_probe: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub tolerance: f64,
}

impl Default for ResidualSuite {
    fn default() -> Self {
        ResidualSuite {
            phi: FieldSpec::zero(),
            psi: FieldSpec::zero(),
            t: 1.0,
            s_probe: vec![0.25, 0.5, 0.75],
            points: Vec::new(),
            tolerance: 1e-3,
        }
    }
}

/// Parameters of the diagonal family behind a `diagonal` model description.
pub fn diagonal_params(spec: &ModelSpec) -> Option<Example1Params> {
    match spec {
        ModelSpec::Diagonal { n, horizon, params } => Some(Example1Params {
            modes: *n,
            a: params.a,
            b: params.b,
            c1: params.c1,
            c2: params.c2,
            eps: params.eps,
            omega: params.omega,
            horizon: *horizon,
        }),
        _ => None,
    }
}

/// Blow-up exponent implied by the model description, when it has one.
pub fn model_theta(spec: &ModelSpec) -> Option<f64> {
    match spec {
        ModelSpec::Scalar { params, .. } if params.diffusion != 0.0 => Some(0.5),
        ModelSpec::Diagonal { params, .. } => Some(0.5 + params.b / params.a),
        _ => None,
    }
}

fn points(name: &str, raw: &[Vec<f64>], dim: usize) -> Result<Vec<DVector<f64>>, CliError> {
    if raw.is_empty() {
        return Err(CliError::config(format!("`{name}` needs at least one point")));
    }
    raw.iter()
        .map(|p| {
            if p.len() != dim {
                Err(CliError::config(format!("`{name}` entries need {dim} coordinates, got {}", p.len())))
            } else {
                Ok(DVector::from_column_slice(p))
            }
        })
        .collect()
}

/// A validated configuration with the model built.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub model: OperatorFamily,
}

impl Prepared {
    pub fn dimension(&self) -> usize {
        self.model.dimension()
    }

    pub fn field(&self, spec: &FieldSpec) -> Result<FieldFunction, CliError> {
        spec.build(self.dimension())
    }

    pub fn points(&self, name: &str, raw: &[Vec<f64>]) -> Result<Vec<DVector<f64>>, CliError> {
        points(name, raw, self.dimension())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Validates the configuration, fills model-dependent defaults and
    /// builds the model. Nothing is written.
    pub fn prepare(mut self) -> Result<Prepared, CliError> {
        let model = self.model.build().map_err(|e| CliError::config(format!("invalid model: {e}")))?;
        let dim = model.dimension();
        let horizon = model.horizon();
        self.budget.seed = self.seed;
        let theta = model_theta(&self.model);
        let in_horizon = |name: &str, ts: &[f64]| -> Result<(), CliError> {
            match ts.iter().find(|v| !(**v >= 0.0 && **v <= horizon)) {
                Some(v) => Err(CliError::config(format!("`{name}` value {v} lies outside [0, {horizon}]"))),
                None => Ok(()),
            }
        };
        match &mut self.suite {
            SuiteConfig::Theta(c) => {
                c.sweep.check(horizon)?;
                if c.expected.is_none() {
                    c.expected = theta;
                }
                if c.optimality && diagonal_params(&self.model).is_none() {
                    return Err(CliError::config("optimality fits need a diagonal model"));
                }
            }
            SuiteConfig::Smoothing(c) => {
                c.sweep.check(horizon)?;
                for f in &c.fields {
                    f.build(dim)?;
                }
            }
            SuiteConfig::Schauder(c) | SuiteConfig::Zygmund(c) => {
                c.phi.build(dim)?;
                c.psi.build(dim)?;
                if c.theta.is_none() {
                    c.theta = theta;
                }
                if c.theta.is_none() {
                    return Err(CliError::config("`theta` is required for this model"));
                }
                if c.s_grid.is_empty() {
                    return Err(CliError::config("`sGrid` must not be empty"));
                }
                in_horizon("t", &[c.t])?;
                in_horizon("sGrid", &c.s_grid)?;
                if c.s_grid.iter().any(|s| *s >= c.t) {
                    return Err(CliError::config("every sGrid entry must be below t"));
                }
                if c.probes.anchors.iter().any(|a| a.len() != dim) {
                    return Err(CliError::config(format!("probe anchors need {dim} coordinates")));
                }
            }
            SuiteConfig::Interpolation(c) => {
                if c.fields.is_empty() {
                    return Err(CliError::config("`fields` must not be empty"));
                }
                for f in &c.fields {
                    f.build(dim)?;
                }
                let [a1, a, a2] = c.exponents;
                if !(0.0 <= a1 && a1 < a && a < a2 && a2 <= 1.0) {
                    return Err(CliError::config(format!("exponents need 0 <= a1 < a < a2 <= 1, got {:?}", c.exponents)));
                }
            }
            SuiteConfig::Sde(c) => {
                let x = c.x.get_or_insert_with(|| vec![0.0; dim]);
                if x.len() != dim {
                    return Err(CliError::config(format!("`x` needs {dim} coordinates")));
                }
                for f in &c.fields {
                    f.build(dim)?;
                }
                in_horizon("s", &[c.s])?;
                in_horizon("t", &[c.t])?;
                if !(c.s < c.t && c.dt > 0.0 && c.paths >= 2) {
                    return Err(CliError::config("sde suite needs s < t, dt > 0 and at least two paths"));
                }
                let steps = ((c.t - c.s) / c.dt).round();
                if (steps * c.dt - (c.t - c.s)).abs() > 1e-12 {
                    return Err(CliError::config(format!("dt = {} does not divide t - s = {}", c.dt, c.t - c.s)));
                }
            }
            SuiteConfig::Solve(c) => {
                c.phi.build(dim)?;
                c.psi.build(dim)?;
                points("points", &c.points, dim)?;
                in_horizon("t", &[c.t])?;
                in_horizon("sGrid", &c.s_grid)?;
                if c.s_grid.iter().any(|s| *s > c.t) {
                    return Err(CliError::config("every sGrid entry must be at most t"));
                }
            }
            SuiteConfig::Residual(c) => {
                c.phi.build(dim)?;
                c.psi.build(dim)?;
                points("points", &c.points, dim)?;
                in_horizon("t", &[c.t])?;
                if c.s_probe.iter().any(|s| !(*s > 0.0 && *s < c.t)) {
                    return Err(CliError::config("sProbe entries must lie strictly inside (0, t)"));
                }
            }
        }
        Ok(Prepared { config: self, model })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THETA: &str = r#"{
        "model": {"type": "diagonal", "N": 16, "T": 1.0, "params": {"a": 2, "b": 1}},
        "suite": {"kind": "theta"}
    }"#;

    #[test]
    fn defaults_are_materialized() {
        let p = ExperimentConfig::from_json(THETA).unwrap().prepare().unwrap();
        let SuiteConfig::Theta(t) = &p.config.suite else { panic!() };
        assert_eq!(t.expected, Some(1.0));
        let text = serde_json::to_string(&p.config).unwrap();
        assert!(text.contains("\"dtMin\":0.0001"), "{text}");
        assert!(text.contains("\"tolerance\":0.05"), "{text}");
        let again = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(again, p.config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            r#"{"model": {"type": "scalar", "N": 1, "T": 1, "params": {"drift": -1, "diffusion": 1}}, "suite": {"kind": "theta"}, "extra": 1}"#,
            r#"{"model": {"type": "scalar", "N": 1, "T": 1, "params": {"drift": -1, "diffusion": 1}}, "suite": {"kind": "theta", "bogus": 2}}"#,
            r#"{"model": {"type": "scalar", "N": 1, "T": 1, "params": {"drift": -1, "diffusion": 1}}, "suite": {"kind": "warp"}}"#,
            r#"{"model": {"type": "scalar", "T": 1, "params": {"drift": -1, "diffusion": 1}}, "suite": {"kind": "theta"}}"#,
        ] {
            assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn field_dimensions_are_checked() {
        assert!(FieldSpec::Cosine { c: vec![1.0, 2.0] }.build(3).is_err());
        assert!(FieldSpec::Cosine { c: vec![1.0, 2.0, 0.0] }.build(3).is_ok());
        assert!(FieldSpec::HolderCusp { alpha: 1.5, center: None }.build(1).is_err());
        let spec: FieldSpec = serde_json::from_str(r#"{"kind": "holderCusp", "alpha": 0.4}"#).unwrap();
        assert_eq!(spec.build(2).unwrap().dimension(), 2);
        assert!(serde_json::from_str::<FieldSpec>(r#"{"kind": "sine", "c": [1], "k": 2}"#).is_err());
    }

    #[test]
    fn step_must_divide_the_interval() {
        let cfg = r#"{"model": {"type": "scalar", "N": 1, "T": 1, "params": {"drift": -1, "diffusion": 1}},
                      "suite": {"kind": "sde", "dt": 0.3}}"#;
        assert!(ExperimentConfig::from_json(cfg).unwrap().prepare().is_err());
    }
}
