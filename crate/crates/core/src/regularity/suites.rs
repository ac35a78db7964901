use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_line, holder_seminorm_batch, ProbeSet, SeminormReport, Verdict};
use crate::error::{Error, Result};
use crate::field::{halfspace, FieldFunction, SourceTerm};
use crate::kolmogorov::{derivative_u1_batch, source_integral, GradingOptions, SolveOptions};
use crate::linalg::op_norm;
use crate::model::OperatorFamily;
use crate::transition::{Budget, Method, TransitionKernel};

/// Distance to the nearest integer below which the Zygmund suite applies.
pub const INTEGER_MARGIN: f64 = 0.05;
/// A suite is uniform in `s` when the largest slice estimate stays within
/// this factor of the median one.
pub const UNIFORMITY_FACTOR: f64 = 2.0;
/// Largest `|slope|` of `log R_n` against `log(t - s)` still called bounded.
pub const SMOOTHING_SLOPE: f64 = 0.1;

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn basis(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

// ---------------------------------------------------------------- smoothing

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingRow {
    pub order: usize,
    pub s: f64,
    pub t: f64,
    pub lambda_norm: f64,
    /// Largest `|D^n P phi(x)(h..)| / (|phi|_inf |h|^n |Lambda|^n)` over probes.
    pub ratio: f64,
    pub field: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingFit {
    pub order: usize,
    pub constant: f64,
    pub slope: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub rows: Vec<SmoothingRow>,
    pub fits: Vec<SmoothingFit>,
}

impl SmoothingReport {
    pub fn all_bounded(&self) -> bool {
        self.fits.iter().all(|f| f.verdict == Verdict::Bounded)
    }
}

/// Settings of [`smoothing_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingOptions {
    pub max_order: usize,
    /// Adds, per time pair, the halfspace indicator aligned with the top
    /// singular direction of `Lambda`, which nearly attains the bound.
    pub extremal: bool,
    /// Number of probe offsets along the extremal line, spread over `[-3, 3]`
    /// standard deviations.
    pub offsets: usize,
    pub method: Method,
    pub budget: Budget,
}

impl Default for SmoothingOptions {
    fn default() -> Self {
        SmoothingOptions { max_order: 3, extremal: true, offsets: 25, method: Method::TensorQuadrature, budget: Budget::default() }
    }
}

/// Measures `R_n(t, s)` for every order up to `max_order` and every time
/// pair, then fits `log R_n` against `log(t - s)`.
///
/// Probe points sit on the line through the origin spanned by the top
/// right singular vector `v` of `Lambda`, at the positions where the mean
/// of `<c, X>` takes the offsets; all derivative directions equal `v`.
pub fn smoothing_suite(
    model: &OperatorFamily,
    fields: &[FieldFunction],
    pairs: &[(f64, f64)],
    opts: &SmoothingOptions,
) -> Result<SmoothingReport> {
    let n = model.dimension();
    let offsets: Vec<f64> = (0..opts.offsets.max(1))
        .map(|i| if opts.offsets <= 1 { 0.0 } else { -3.0 + 6.0 * i as f64 / (opts.offsets - 1) as f64 })
        .collect();
    let per_pair = pairs
        .par_iter()
        .map(|&(s, t)| -> Result<Vec<SmoothingRow>> {
            let kernel = TransitionKernel::new(model, s, t)?;
            let bundle = kernel.bundle().ok_or(Error::NoSmoothing { s, t })?;
            bundle.require_nondegenerate()?;
            let svd = bundle.lambda.clone().svd(true, true);
            let top = svd.singular_values.imax();
            let norm = svd.singular_values[top];
            let u1: DVector<f64> = svd.u.as_ref().unwrap().column(top).into();
            let v1: DVector<f64> = svd.v_t.as_ref().unwrap().row(top).transpose();
            let c = bundle.law.root.apply_pinv_sqrt(&u1);
            let shift = c.dot(&kernel.offset);
            let points: Vec<DVector<f64>> = offsets.iter().map(|a| &v1 * ((a - shift) / norm)).collect();

            let mut candidates: Vec<FieldFunction> = fields.to_vec();
            if opts.extremal {
                candidates.push(halfspace(c, 0.0).with_label("extremal-halfspace"));
            }
            let mut rows = Vec::new();
            for order in 1..=opts.max_order {
                let dirs = vec![v1.clone(); order];
                for phi in &candidates {
                    if phi.dimension() != n {
                        return Err(Error::Dimension { expected: n, got: phi.dimension() });
                    }
                    let sup = phi.declared_sup().ok_or_else(|| {
                        Error::Precondition(format!("field `{}` needs a declared sup norm", phi.label()))
                    })?;
                    let mut best = 0.0f64;
                    for x in &points {
                        let d = kernel.derivative(phi, x, &dirs, opts.method, &opts.budget)?;
                        best = best.max(d.value.abs());
                    }
                    let ratio = if sup > 0.0 { best / (sup * norm.powi(order as i32)) } else { 0.0 };
                    rows.push(SmoothingRow { order, s, t, lambda_norm: norm, ratio, field: phi.label().to_string() });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<SmoothingRow> = per_pair.into_iter().flatten().collect();

    let fits = (1..=opts.max_order)
        .map(|order| {
            let (gaps, ratios): (Vec<f64>, Vec<f64>) = pairs
                .iter()
                .map(|&(s, t)| {
                    let r = rows
                        .iter()
                        .filter(|r| r.order == order && r.s == s && r.t == t)
                        .map(|r| r.ratio)
                        .fold(0.0, f64::max);
                    (t - s, r)
                })
                .unzip();
            let constant = ratios.iter().cloned().fold(0.0, f64::max);
            let (lx, ly): (Vec<f64>, Vec<f64>) = gaps
                .iter()
                .zip(&ratios)
                .filter(|(_, r)| **r > 0.0)
                .map(|(g, r)| (g.ln(), r.ln()))
                .unzip();
            let slope = if lx.len() >= 2 { fit_line(&lx, &ly).0 } else { 0.0 };
            let verdict = if slope.abs() <= SMOOTHING_SLOPE { Verdict::Bounded } else { Verdict::Growing };
            SmoothingFit { order, constant, slope, verdict }
        })
        .collect();
    Ok(SmoothingReport { rows, fits })
}

// ------------------------------------------------------- Schauder / Zygmund

/// Inputs shared by the Schauder and Zygmund suites.
#[derive(Clone)]
pub struct SuiteSetup<'a> {
    pub model: &'a OperatorFamily,
    pub phi: &'a FieldFunction,
    pub psi: &'a SourceTerm,
    /// Hölder exponent of the source.
    pub alpha: f64,
    pub theta: f64,
    pub t: f64,
    pub s_grid: &'a [f64],
    pub probes: &'a ProbeSet,
    pub grading: GradingOptions,
}

impl SuiteSetup<'_> {
    pub fn exponent(&self) -> f64 {
        self.alpha + 1.0 / self.theta
    }

    fn grading(&self) -> GradingOptions {
        GradingOptions { theta: self.theta, alpha: Some(self.alpha), ..self.grading }
    }

    /// `D^order u(s, x)` for every point: the value for order 0, the
    /// gradient for order 1, the Hessian for order 2 and the derivative
    /// along `e_1` repeated for higher orders.
    fn derivative_tensor(&self, s: f64, order: usize, xs: &[DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let n = self.model.dimension();
        let grading = self.grading();
        let (method, budget) = (grading.method, grading.budget);
        let kernel = TransitionKernel::new(self.model, s, self.t)?;
        let u0 = |dirs: &[DVector<f64>]| -> Result<Vec<f64>> {
            xs.par_iter().map(|x| kernel.derivative(self.phi, x, dirs, method, &budget).map(|e| e.value)).collect()
        };
        let component = |dirs: &[DVector<f64>]| -> Result<Vec<f64>> {
            let a = u0(dirs)?;
            let b = derivative_u1_batch(self.model, self.psi, s, self.t, xs, dirs, &grading)?;
            Ok(a.iter().zip(b).map(|(a, b)| a + b.value).collect())
        };
        match order {
            0 => {
                let opts = SolveOptions { method, budget, ..Default::default() };
                let a = u0(&[])?;
                let b = source_integral(self.model, self.psi, s, self.t, xs, &opts)?;
                Ok(a.iter().zip(b).map(|(a, b)| DMatrix::from_element(1, 1, a + b.0)).collect())
            }
            1 => {
                let mut out = vec![DMatrix::zeros(n, 1); xs.len()];
                for i in 0..n {
                    for (o, v) in out.iter_mut().zip(component(&[basis(n, i)])?) {
                        o[(i, 0)] = v;
                    }
                }
                Ok(out)
            }
            2 => {
                let mut out = vec![DMatrix::zeros(n, n); xs.len()];
                for i in 0..n {
                    for j in i..n {
                        for (o, v) in out.iter_mut().zip(component(&[basis(n, i), basis(n, j)])?) {
                            o[(i, j)] = v;
                            o[(j, i)] = v;
                        }
                    }
                }
                Ok(out)
            }
            k => Ok(component(&vec![basis(n, 0); k])?.into_iter().map(|v| DMatrix::from_element(1, 1, v)).collect()),
        }
    }

    // Hölder-type norm of a field: sum of probe sups of |D^j f| for j <= order
    // plus the probe seminorm of D^order f at exponent beta.
    fn field_norm(&self, f: &dyn Fn(&DVector<f64>, &[DVector<f64>]) -> Result<f64>, order: usize, beta: f64) -> Option<f64> {
        let p = self.probes;
        let mut points = p.base_points.clone();
        for x in &p.base_points {
            for e in &p.directions {
                points.extend(p.magnitudes.iter().map(|d| x + e * *d));
            }
        }
        let mut total = 0.0;
        for j in 0..=order {
            let mut sup = 0.0f64;
            for x in &points {
                for e in &p.directions {
                    sup = sup.max(f(x, &vec![e.clone(); j]).ok()?.abs());
                    if j == 0 {
                        break;
                    }
                }
            }
            total += sup;
        }
        if beta > 0.0 {
            let mut semi = 0.0f64;
            for x in &p.base_points {
                for e in &p.directions {
                    let dirs = vec![e.clone(); order];
                    let base = f(x, &dirs).ok()?;
                    for d in &p.magnitudes {
                        semi = semi.max((f(&(x + e * *d), &dirs).ok()? - base).abs() / d.powf(beta));
                    }
                }
            }
            total += semi;
        }
        Some(total)
    }

    fn data_norm(&self, order: usize, beta: f64) -> Option<f64> {
        let phi = |x: &DVector<f64>, dirs: &[DVector<f64>]| self.phi.derivative_value(x, dirs);
        let source = self.psi.at(self.t);
        let psi = |x: &DVector<f64>, dirs: &[DVector<f64>]| source.derivative_value(x, dirs);
        Some(self.field_norm(&phi, order, beta)? + self.field_norm(&psi, 0, self.alpha)?)
    }

    fn uniformity(globals: &[f64]) -> (f64, f64, bool) {
        let sup = globals.iter().cloned().fold(0.0, f64::max);
        let med = median(globals);
        let uniform = if med > 0.0 { sup <= UNIFORMITY_FACTOR * med } else { sup == 0.0 };
        (sup, med, uniform)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchauderSlice {
    pub s: f64,
    pub measured: SeminormReport,
    pub sharpness: SeminormReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchauderReport {
    pub theta: f64,
    pub exponent: f64,
    pub order: usize,
    pub holder_exponent: f64,
    pub slices: Vec<SchauderSlice>,
    pub sup_over_s: f64,
    pub median_over_s: f64,
    pub scale_stable: bool,
    pub uniform: bool,
    pub sharpness_growing: bool,
    pub data_norm: Option<f64>,
    pub ratio: Option<f64>,
}

/// Probes `[D^n u(s, .)]_{C^beta}` with `n + beta = alpha + 1/theta` on every
/// slice of the grid, plus the same differences at exponent `beta + 0.2`.
pub fn schauder_suite(setup: &SuiteSetup<'_>) -> Result<SchauderReport> {
    let exponent = setup.exponent();
    if (exponent - exponent.round()).abs() <= INTEGER_MARGIN {
        return Err(Error::NearIntegerExponent { exponent, margin: INTEGER_MARGIN });
    }
    let order = exponent.floor() as usize;
    let beta = exponent - order as f64;
    let mut slices = Vec::with_capacity(setup.s_grid.len());
    for &s in setup.s_grid {
        let eval = |xs: &[DVector<f64>]| setup.derivative_tensor(s, order, xs);
        let measured = try_batch(&eval, |f| holder_seminorm_batch(f, beta, setup.probes))?;
        let sharpness = measured.at_exponent(beta + 0.2);
        slices.push(SchauderSlice { s, measured, sharpness });
    }
    let globals: Vec<f64> = slices.iter().map(|r| r.measured.global).collect();
    let (sup, med, uniform) = SuiteSetup::uniformity(&globals);
    let data_norm = setup.data_norm(order, beta);
    Ok(SchauderReport {
        theta: setup.theta,
        exponent,
        order,
        holder_exponent: beta,
        scale_stable: slices.iter().all(|r| r.measured.verdict == Verdict::Bounded),
        sharpness_growing: slices.iter().all(|r| r.sharpness.verdict == Verdict::Growing),
        slices,
        sup_over_s: sup,
        median_over_s: med,
        uniform,
        ratio: data_norm.map(|d| if d > 0.0 { sup / d } else { 0.0 }),
        data_norm,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZygmundSlice {
    pub s: f64,
    pub zygmund: SeminormReport,
    /// First-difference quotient of the same field at exponent 1.
    pub lipschitz_proxy: SeminormReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZygmundReport {
    pub theta: f64,
    pub exponent: f64,
    pub k: usize,
    pub slices: Vec<ZygmundSlice>,
    pub sup_over_s: f64,
    pub median_over_s: f64,
    pub scale_stable: bool,
    pub uniform: bool,
    pub proxy_growing: bool,
}

/// Probes `[D^{k-1} u(s, .)]_{Z^1}` at the borderline `alpha + 1/theta ~ k`.
pub fn zygmund_suite(setup: &SuiteSetup<'_>) -> Result<ZygmundReport> {
    let exponent = setup.exponent();
    let k = exponent.round();
    if (exponent - k).abs() > INTEGER_MARGIN || k < 1.0 {
        return Err(Error::NotBorderline { exponent, margin: INTEGER_MARGIN });
    }
    let k = k as usize;
    let mut slices = Vec::with_capacity(setup.s_grid.len());
    for &s in setup.s_grid {
        let eval = |xs: &[DVector<f64>]| setup.derivative_tensor(s, k - 1, xs);
        let (zygmund, lipschitz_proxy) = try_batch(&eval, |f| second_differences(f, setup.probes))?;
        slices.push(ZygmundSlice { s, zygmund, lipschitz_proxy });
    }
    let globals: Vec<f64> = slices.iter().map(|r| r.zygmund.global).collect();
    let (sup, med, uniform) = SuiteSetup::uniformity(&globals);
    Ok(ZygmundReport {
        theta: setup.theta,
        exponent,
        k,
        scale_stable: slices.iter().all(|r| r.zygmund.verdict == Verdict::Bounded),
        proxy_growing: slices.iter().all(|r| r.lipschitz_proxy.verdict == Verdict::Growing),
        slices,
        sup_over_s: sup,
        median_over_s: med,
        uniform,
    })
}

// Runs a seminorm routine on a fallible batch evaluator, surfacing the
// first evaluation error.
fn try_batch<T>(
    eval: &dyn Fn(&[DVector<f64>]) -> Result<Vec<DMatrix<f64>>>,
    run: impl FnOnce(&super::BatchEval<'_>) -> T,
) -> Result<T> {
    let failure = std::sync::Mutex::new(None);
    let wrapped = |xs: &[DVector<f64>]| match eval(xs) {
        Ok(v) => v,
        Err(e) => {
            *failure.lock().unwrap() = Some(e);
            vec![DMatrix::zeros(1, 1); xs.len()]
        }
    };
    let out = run(&wrapped);
    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

// Zygmund quotients and Lipschitz quotients from one set of evaluations.
fn second_differences(eval: &super::BatchEval<'_>, probes: &ProbeSet) -> (SeminormReport, SeminormReport) {
    let values = eval(&probes.second_difference_points());
    let p = probes.base_points.len();
    let (nd, nl) = (probes.directions.len(), probes.magnitudes.len());
    let mut zyg = vec![0.0f64; nl];
    let mut lip = vec![0.0f64; nl];
    for i in 0..p {
        for j in 0..nd {
            for (l, d) in probes.magnitudes.iter().enumerate() {
                let q = p + 2 * ((i * nd + j) * nl + l);
                let (f0, f1, f2) = (&values[i], &values[q], &values[q + 1]);
                zyg[l] = zyg[l].max(op_norm(&(f2 - f1 * 2.0 + f0)) / d);
                lip[l] = lip[l].max(op_norm(&(f1 - f0)) / d);
            }
        }
    }
    (
        SeminormReport::from_scales(1.0, probes.magnitudes.clone(), zyg),
        SeminormReport::from_scales(1.0, probes.magnitudes.clone(), lip),
    )
}

// ------------------------------------------------------------ interpolation

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolationRow {
    pub field: String,
    pub norm_low: f64,
    pub norm_mid: f64,
    pub norm_high: f64,
    /// `norm_low^{(a2 - a)/(a2 - a1)} norm_high^{(a - a1)/(a2 - a1)}`.
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub exponents: [f64; 3],
    pub rows: Vec<InterpolationRow>,
    pub c_fit: f64,
}

/// Probe estimate of `|psi|_{C^beta}` for `beta` in `[0, 1]`: the sup norm,
/// plus the Hölder seminorm for `0 < beta < 1`, or plus the sup of `|D psi|`
/// for `beta = 1`.
pub fn holder_norm(psi: &FieldFunction, beta: f64, probes: &ProbeSet) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("norm exponent {beta} outside [0, 1]")));
    }
    let points = probes.first_difference_points();
    let values: Vec<f64> = points.par_iter().map(|x| psi.eval(x)).collect();
    let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if beta == 0.0 {
        return Ok(sup);
    }
    if beta < 1.0 {
        let f = |xs: &[DVector<f64>]| -> Vec<DMatrix<f64>> {
            xs.iter().map(|x| DMatrix::from_element(1, 1, psi.eval(x))).collect()
        };
        return Ok(sup + holder_seminorm_batch(&f, beta, probes).global);
    }
    let n = psi.dimension();
    let grads = points
        .par_iter()
        .map(|x| {
            (0..n)
                .map(|i| psi.derivative_value(x, &[basis(n, i)]))
                .collect::<Result<Vec<f64>>>()
                .map(|g| DVector::from_vec(g).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sup + grads.iter().cloned().fold(0.0, f64::max))
}

pub fn interpolation_check(
    fields: &[FieldFunction],
    alpha1: f64,
    alpha: f64,
    alpha2: f64,
    probes: &ProbeSet,
) -> Result<InterpolationReport> {
    if !(0.0 <= alpha1 && alpha1 < alpha && alpha < alpha2 && alpha2 <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= a1 < a < a2 <= 1, got ({alpha1}, {alpha}, {alpha2})"
        )));
    }
    let wl = (alpha2 - alpha) / (alpha2 - alpha1);
    let wh = (alpha - alpha1) / (alpha2 - alpha1);
    let rows = fields
        .iter()
        .map(|psi| {
            let norm_low = holder_norm(psi, alpha1, probes)?;
            let norm_mid = holder_norm(psi, alpha, probes)?;
            let norm_high = holder_norm(psi, alpha2, probes)?;
            let bound = norm_low.powf(wl) * norm_high.powf(wh);
            let ratio = if bound > 0.0 { norm_mid / bound } else { 0.0 };
            Ok(InterpolationRow { field: psi.label().to_string(), norm_low, norm_mid, norm_high, bound, ratio })
        })
        .collect::<Result<Vec<_>>>()?;
    let c_fit = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(InterpolationReport { exponents: [alpha1, alpha, alpha2], rows, c_fit })
}

// ----------------------------------------------------------- Hölder transfer

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferCheck {
    pub measured: f64,
    /// `|U(t, s)|^alpha [phi]_alpha`.
    pub bound: f64,
    pub holds: bool,
}

/// Compares the probe seminorm of `P_{s,t} phi` with
/// `|U(t, s)|^alpha [phi]_alpha`, allowing 5% slack.
pub fn holder_transfer_check(
    model: &OperatorFamily,
    phi: &FieldFunction,
    s: f64,
    t: f64,
    alpha: f64,
    probes: &ProbeSet,
    method: Method,
    budget: &Budget,
) -> Result<TransferCheck> {
    let kernel = TransitionKernel::new(model, s, t)?;
    let eval = |xs: &[DVector<f64>]| -> Result<Vec<DMatrix<f64>>> {
        xs.par_iter()
            .map(|x| kernel.apply(phi, x, method, budget).map(|e| DMatrix::from_element(1, 1, e.value)))
            .collect()
    };
    let measured = try_batch(&eval, |f| holder_seminorm_batch(f, alpha, probes))?.global;
    let semi = match phi.declared_seminorm() {
        Some(v) => v,
        None => {
            let f = |xs: &[DVector<f64>]| -> Vec<DMatrix<f64>> {
                xs.iter().map(|x| DMatrix::from_element(1, 1, phi.eval(x))).collect()
            };
            holder_seminorm_batch(&f, alpha, probes).global
        }
    };
    let bound = op_norm(&kernel.evolution).powf(alpha) * semi;
    Ok(TransferCheck { measured, bound, holds: measured <= 1.05 * bound })
}
