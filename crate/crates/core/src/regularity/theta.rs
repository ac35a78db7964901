use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_line, log_spaced};
use crate::error::{Error, Result};
use crate::gaussian::smoothing_bundle;
use crate::model::{DiagonalModel, OperatorFamily};
use crate::rng;

const MIN_PAIRS: usize = 8;
const JITTER_TAG: u64 = 0x4a49_5454;

/// Power-law fit `log |Lambda(t, s)| = log C - theta log(t - s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaFit {
    pub theta: f64,
    pub constant: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub gaps: Vec<f64>,
    pub norms: Vec<f64>,
}

/// `count` pairs `(t - dt, t)` with `dt` log-spaced in `[dt_min, dt_max]`.
pub fn log_spaced_pairs(t: f64, dt_min: f64, dt_max: f64, count: usize) -> Vec<(f64, f64)> {
    log_spaced(dt_min, dt_max, count).into_iter().map(|d| (t - d, t)).collect()
}

fn check_sweep(pairs: &[(f64, f64)]) -> Result<Vec<f64>> {
    let gaps: Vec<f64> = pairs.iter().map(|(s, t)| t - s).collect();
    let lo = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gaps.iter().cloned().fold(0.0, f64::max);
    if pairs.len() < MIN_PAIRS || !(lo > 0.0) || hi / lo < 100.0 * (1.0 - 1e-9) {
        return Err(Error::InsufficientSweep { need: MIN_PAIRS, got: pairs.len() });
    }
    Ok(gaps)
}

fn fit(gaps: Vec<f64>, norms: Vec<f64>) -> ThetaFit {
    let lx: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|n| n.ln()).collect();
    let (slope, intercept) = fit_line(&lx, &ly);
    let residual = (lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / lx.len() as f64)
        .sqrt();
    ThetaFit { theta: -slope, constant: intercept.exp(), residual, gaps, norms }
}

fn lambda_norm(model: &OperatorFamily, s: f64, t: f64) -> Result<f64> {
    let b = smoothing_bundle(model, s, t)?;
    b.require_nondegenerate()?;
    Ok(b.lambda_norm)
}

pub fn estimate_theta(model: &OperatorFamily, pairs: &[(f64, f64)]) -> Result<ThetaFit> {
    let gaps = check_sweep(pairs)?;
    let norms = pairs
        .par_iter()
        .map(|(s, t)| lambda_norm(model, *s, *t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(fit(gaps, norms))
}

/// Lower-envelope fit for the diagonal family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityFit {
    pub theta_low: f64,
    pub constant: f64,
    pub theta_star: f64,
    pub certified: bool,
    /// `N^a dt_min` against the start of the saturation window.
    pub reach: f64,
    pub window: f64,
    pub fit: ThetaFit,
}

/// Fits `log min_j |Lambda(s_j + dt, s_j)|` against `log dt`, where the
/// `s_j` are `jitter` seeded start times spread over `[0, T - dt]` in
/// addition to the given pair.
pub fn theta_optimality(
    model: &DiagonalModel,
    pairs: &[(f64, f64)],
    jitter: usize,
    seed: u64,
) -> Result<OptimalityFit> {
    let gaps = check_sweep(pairs)?;
    let p = &model.params;
    let dt_min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let reach = (p.modes as f64).powf(p.a) * dt_min;
    let window = model.saturation_window().0;
    if reach < window {
        return Err(Error::InsufficientModes { reach, window });
    }
    let family = model.family();
    let horizon = family.horizon();
    let minima = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (s, t))| {
            let dt = t - s;
            let mut stream = rng::stream(seed, &[JITTER_TAG, i as u64]);
            let mut starts = vec![*s];
            starts.extend((0..jitter).map(|_| stream.random::<f64>() * (horizon - dt)));
            starts
                .iter()
                .map(|s0| lambda_norm(family, *s0, s0 + dt))
                .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let fit = fit(gaps, minima);
    let theta_star = model.theta_star();
    Ok(OptimalityFit {
        theta_low: fit.theta,
        constant: fit.constant,
        theta_star,
        certified: fit.theta >= theta_star - 0.1,
        reach,
        window,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_exponent_is_exact() {
        let m = OperatorFamily::scalar_constant("heat", 2, 1.0, 0.0, 1.0).unwrap();
        let f = estimate_theta(&m, &log_spaced_pairs(1.0, 1e-4, 1e-1, 9)).unwrap();
        assert!((f.theta - 0.5).abs() < 1e-10 && f.residual < 1e-10, "{f:?}");
        assert!((f.constant - 1.0).abs() < 1e-8);
    }

    #[test]
    fn short_sweeps_rejected() {
        let m = OperatorFamily::scalar_constant("heat", 1, 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            estimate_theta(&m, &log_spaced_pairs(1.0, 1e-3, 1e-2, 9)),
            Err(Error::InsufficientSweep { .. })
        ));
        assert!(estimate_theta(&m, &log_spaced_pairs(1.0, 1e-4, 1e-1, 5)).is_err());
    }
}
