//! Euler–Maruyama simulation of the forward equation and Monte Carlo checks
//! of its law against the Gaussian analytics.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldFunction;
use crate::gaussian::{covariance, mean};
use crate::linalg::is_diagonal;
use crate::model::OperatorFamily;
use crate::rng;
use crate::transition::{apply_p, Budget, Method};

/// Pass threshold for every z-score.
pub const Z_THRESHOLD: f64 = 4.0;
const PATH_TAG: u64 = 0x5041_5448;
const BRIDGE_TAG: u64 = 0x4252_4447;

/// Terminal states of independent Euler–Maruyama paths started at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub s: f64,
    pub t: f64,
    pub dt: f64,
    pub seed: u64,
    pub start: DVector<f64>,
    /// One row per path.
    pub terminal_states: DMatrix<f64>,
}

impl PathEnsemble {
    pub fn path_count(&self) -> usize {
        self.terminal_states.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.terminal_states.ncols()
    }

    pub fn steps(&self) -> usize {
        ((self.t - self.s) / self.dt).round() as usize
    }

    /// Flat little-endian layout: `N`, path count (u64), `dt`, `s`, `t` (f64),
    /// seed (u64), the start point, then one row of `N` floats per path.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dimension();
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&(self.path_count() as u64).to_le_bytes())?;
        for v in [self.dt, self.s, self.t] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        for v in self.start.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for row in self.terminal_states.row_iter() {
            for v in row.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut b = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let paths = u64::from_le_bytes(next(&mut r)?) as usize;
        let dt = f64::from_le_bytes(next(&mut r)?);
        let s = f64::from_le_bytes(next(&mut r)?);
        let t = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let mut start = DVector::zeros(n);
        for i in 0..n {
            start[i] = f64::from_le_bytes(next(&mut r)?);
        }
        let mut states = DMatrix::zeros(paths, n);
        for p in 0..paths {
            for i in 0..n {
                states[(p, i)] = f64::from_le_bytes(next(&mut r)?);
            }
        }
        Ok(PathEnsemble { s, t, dt, seed, start, terminal_states: states })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn step_count(s: f64, t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {dt}")));
    }
    let steps = ((t - s) / dt).round();
    if steps < 1.0 || (steps * dt - (t - s)).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("step {dt} does not divide the interval length {}", t - s)));
    }
    Ok(steps as usize)
}

// Per-step coefficients, flattened row-major.
struct Coefficients {
    n: usize,
    drift: Vec<Vec<f64>>,
    diagonal: Vec<bool>,
    noise: Vec<Vec<f64>>,
    forcing: Vec<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn coefficients(model: &OperatorFamily, s: f64, dt: f64, steps: usize) -> Coefficients {
    let times: Vec<f64> = (0..steps).map(|k| s + k as f64 * dt).collect();
    let drift: Vec<DMatrix<f64>> = times.iter().map(|&tau| model.drift(tau)).collect();
    Coefficients {
        n: model.dimension(),
        diagonal: drift.iter().map(is_diagonal).collect(),
        drift: drift.iter().map(row_major).collect(),
        noise: times.iter().map(|&tau| row_major(&(model.diffusion(tau) * dt.sqrt()))).collect(),
        forcing: times.iter().map(|&tau| model.forcing(tau).as_slice().to_vec()).collect(),
    }
}

impl Coefficients {
    fn advance(&self, k: usize, dt: f64, state: &mut [f64], xi: &[f64], next: &mut [f64]) {
        let n = self.n;
        let (a, b, f) = (&self.drift[k], &self.noise[k], &self.forcing[k]);
        for i in 0..n {
            let push = if self.diagonal[k] {
                a[i * n + i] * state[i]
            } else {
                (0..n).map(|j| a[i * n + j] * state[j]).sum()
            };
            let noise: f64 = (0..n).map(|j| b[i * n + j] * xi[j]).sum();
            next[i] = state[i] + (push + f[i]) * dt + noise;
        }
        state.copy_from_slice(next);
    }
}

// One path. With `bridge`, the steps are halved and each coarse normal
// `xi` is split as `((xi + zeta)/sqrt 2, (xi - zeta)/sqrt 2)` using a second
// stream, so that the refined path shares the coarse Brownian increments.
fn run_path(c: &Coefficients, x: &[f64], dt: f64, seed: u64, path: u64, bridge: bool) -> Vec<f64> {
    let n = c.n;
    let mut main = rng::stream(seed, &[PATH_TAG, path]);
    let mut aux = rng::stream(seed, &[BRIDGE_TAG, path]);
    let mut state = x.to_vec();
    let mut next = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let mut first = vec![0.0; n];
    let mut second = vec![0.0; n];
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let coarse = if bridge { c.drift.len() / 2 } else { c.drift.len() };
    for k in 0..coarse {
        rng::fill_normal(&mut main, &mut xi);
        if bridge {
            for i in 0..n {
                let zeta: f64 = StandardNormal.sample(&mut aux);
                first[i] = (xi[i] + zeta) * half;
                second[i] = (xi[i] - zeta) * half;
            }
            c.advance(2 * k, dt, &mut state, &first, &mut next);
            c.advance(2 * k + 1, dt, &mut state, &second, &mut next);
        } else {
            c.advance(k, dt, &mut state, &xi, &mut next);
        }
    }
    state
}

fn simulate_impl(
    model: &OperatorFamily,
    x: &DVector<f64>,
    s: f64,
    t: f64,
    dt: f64,
    path_count: usize,
    seed: u64,
    bridge: bool,
) -> Result<PathEnsemble> {
    model.check_times(s, t)?;
    if x.len() != model.dimension() {
        return Err(Error::Dimension { expected: model.dimension(), got: x.len() });
    }
    if path_count == 0 {
        return Err(Error::InvalidParameter("path count must be at least 1".into()));
    }
    let steps = step_count(s, t, dt)?;
    let (fine_dt, fine_steps) = if bridge { (dt / 2.0, 2 * steps) } else { (dt, steps) };
    let c = coefficients(model, s, fine_dt, fine_steps);
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..path_count as u64)
        .into_par_iter()
        .map(|p| run_path(&c, x.as_slice(), fine_dt, seed, p, bridge))
        .collect();
    let states = DMatrix::from_fn(path_count, n, |p, i| rows[p][i]);
    Ok(PathEnsemble { s, t, dt: fine_dt, seed, start: x.clone(), terminal_states: states })
}

/// `X_{k+1} = X_k + (A(tau_k) X_k + f(tau_k)) dt + B(tau_k) sqrt(dt) xi_k`
/// with per-path streams keyed by `(seed, path)`.
pub fn simulate(
    model: &OperatorFamily,
    x: &DVector<f64>,
    s: f64,
    t: f64,
    dt: f64,
    path_count: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_impl(model, x, s, t, dt, path_count, seed, false)
}

/// The same paths at step `dt / 2`, driven by a refinement of the Brownian
/// increments used by [`simulate`] with the same arguments.
pub fn simulate_refined(
    model: &OperatorFamily,
    x: &DVector<f64>,
    s: f64,
    t: f64,
    dt: f64,
    path_count: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_impl(model, x, s, t, dt, path_count, seed, true)
}

/// The coupled half-step companion of an ensemble.
pub fn refine(ensemble: &PathEnsemble, model: &OperatorFamily) -> Result<PathEnsemble> {
    let e = ensemble;
    simulate_refined(model, &e.start, e.s, e.t, e.dt, e.path_count(), e.seed)
}

/// Sample mean and covariance, centred on the first row so that identical
/// rows give an exactly zero covariance, with standard errors.
#[derive(Debug, Clone)]
struct Moments {
    mean: DVector<f64>,
    mean_stderr: DVector<f64>,
    cov: DMatrix<f64>,
    cov_stderr: DMatrix<f64>,
}

fn moments(states: &DMatrix<f64>) -> Moments {
    let (m, n) = states.shape();
    let mf = m as f64;
    let origin = states.row(0).transpose();
    let centred = DMatrix::from_fn(m, n, |p, i| states[(p, i)] - origin[i]);
    let shift = centred.row_mean().transpose();
    let dev = DMatrix::from_fn(m, n, |p, i| centred[(p, i)] - shift[i]);
    let denom = (mf - 1.0).max(1.0);
    let cov = dev.transpose() * &dev / denom;
    let mut cov_stderr = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let c = cov[(i, j)];
            let var: f64 = (0..m).map(|p| (dev[(p, i)] * dev[(p, j)] - c).powi(2)).sum::<f64>() / denom;
            cov_stderr[(i, j)] = (var / mf).sqrt();
        }
    }
    Moments {
        mean: origin + shift,
        mean_stderr: DVector::from_fn(n, |i, _| (cov[(i, i)] / mf).sqrt()),
        cov,
        cov_stderr,
    }
}

// |emp - exact| in excess of the bias allowance, in units of the standard error.
fn z_score(emp: f64, exact: f64, stderr: f64, allowance: f64) -> f64 {
    let excess = ((emp - exact).abs() - allowance).max(0.0);
    if excess == 0.0 {
        0.0
    } else if stderr > 0.0 {
        excess / stderr
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LawEntry {
    /// `"mean"` or `"cov"`.
    pub kind: String,
    pub i: usize,
    pub j: usize,
    pub empirical: f64,
    pub exact: f64,
    pub stderr: f64,
    pub allowance: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LawReport {
    pub entries: Vec<LawEntry>,
    pub max_z: f64,
    pub passed: bool,
}

/// z-scores of the empirical mean and covariance against `m^x(t, s)` and
/// `Q(t, s)`. The Euler bias allowance per entry is the Richardson estimate
/// `2 |E_dt - E_{dt/2}|` from a coupled half-step run.
pub fn law_check(ensemble: &PathEnsemble, model: &OperatorFamily) -> Result<LawReport> {
    law_check_with(ensemble, &refine(ensemble, model)?, model)
}

/// [`law_check`] with a precomputed half-step ensemble.
pub fn law_check_with(ensemble: &PathEnsemble, refined: &PathEnsemble, model: &OperatorFamily) -> Result<LawReport> {
    let e = ensemble;
    let exact_mean = mean(model, &e.start, e.s, e.t)?;
    let exact_cov = covariance(model, e.s, e.t)?.covariance;
    let coarse = moments(&e.terminal_states);
    let fine = moments(&refined.terminal_states);
    let n = e.dimension();
    let mut entries = Vec::new();
    for i in 0..n {
        let allowance = 2.0 * (coarse.mean[i] - fine.mean[i]).abs();
        entries.push(LawEntry {
            kind: "mean".into(),
            i,
            j: i,
            empirical: coarse.mean[i],
            exact: exact_mean[i],
            stderr: coarse.mean_stderr[i],
            allowance,
            z: z_score(coarse.mean[i], exact_mean[i], coarse.mean_stderr[i], allowance),
        });
    }
    for i in 0..n {
        for j in i..n {
            let allowance = 2.0 * (coarse.cov[(i, j)] - fine.cov[(i, j)]).abs();
            let (emp, exact, se) = (coarse.cov[(i, j)], exact_cov[(i, j)], coarse.cov_stderr[(i, j)]);
            entries.push(LawEntry {
                kind: "cov".into(),
                i,
                j,
                empirical: emp,
                exact,
                stderr: se,
                allowance,
                z: z_score(emp, exact, se, allowance),
            });
        }
    }
    let max_z = entries.iter().map(|e| e.z).fold(0.0, f64::max);
    Ok(LawReport { entries, max_z, passed: max_z <= Z_THRESHOLD })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakRecord {
    pub field: String,
    pub empirical: f64,
    pub empirical_stderr: f64,
    pub analytic: f64,
    pub analytic_stderr: f64,
    pub allowance: f64,
    pub difference: f64,
    pub passed: bool,
}

fn average(phi: &FieldFunction, states: &DMatrix<f64>) -> (f64, f64) {
    let values: Vec<f64> = (0..states.nrows())
        .into_par_iter()
        .map(|p| phi.eval(&states.row(p).transpose()))
        .collect();
    let m = values.len() as f64;
    let avg = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    (avg, (var / m).sqrt())
}

/// Ensemble average of `phi(X_t)` against `P_{s,t} phi (x)`.
pub fn weak_check(
    ensemble: &PathEnsemble,
    phi: &FieldFunction,
    model: &OperatorFamily,
    method: Method,
    budget: &Budget,
) -> Result<WeakRecord> {
    let refined = refine(ensemble, model)?;
    weak_check_with(ensemble, &refined, phi, model, method, budget)
}

/// [`weak_check`] with a precomputed half-step ensemble.
pub fn weak_check_with(
    ensemble: &PathEnsemble,
    refined: &PathEnsemble,
    phi: &FieldFunction,
    model: &OperatorFamily,
    method: Method,
    budget: &Budget,
) -> Result<WeakRecord> {
    let e = ensemble;
    let (empirical, empirical_stderr) = average(phi, &e.terminal_states);
    let (fine, _) = average(phi, &refined.terminal_states);
    let analytic = apply_p(model, phi, e.s, e.t, &e.start, method, budget)?;
    let allowance = 2.0 * (empirical - fine).abs();
    let difference = empirical - analytic.value;
    let combined = (empirical_stderr.powi(2) + analytic.stderr.powi(2)).sqrt();
    Ok(WeakRecord {
        field: phi.label().to_string(),
        empirical,
        empirical_stderr,
        analytic: analytic.value,
        analytic_stderr: analytic.stderr,
        allowance,
        difference,
        passed: difference.abs() <= Z_THRESHOLD * combined + allowance,
    })
}

/// Total law error `sum |mean error| + sum |covariance error|` of the
/// ensemble at `dt` divided by that at `dt / 2`, both from independent
/// seeds so the ratio reflects the bias rather than shared noise.
pub fn weak_error_ratio(
    model: &OperatorFamily,
    x: &DVector<f64>,
    s: f64,
    t: f64,
    dt: f64,
    path_count: usize,
    seed: u64,
) -> Result<f64> {
    let exact_mean = mean(model, x, s, t)?;
    let exact_cov = covariance(model, s, t)?.covariance;
    let error = |e: &PathEnsemble| {
        let m = moments(&e.terminal_states);
        (&m.mean - &exact_mean).abs().sum() + (&m.cov - &exact_cov).abs().sum()
    };
    let coarse = simulate(model, x, s, t, dt, path_count, seed)?;
    let fine = simulate(model, x, s, t, dt / 2.0, path_count, seed.wrapping_add(1))?;
    Ok(error(&coarse) / error(&fine))
}
