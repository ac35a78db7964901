use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{covariance_with, GaussianLaw, QuadOptions};
use crate::error::{Error, Result};
use crate::linalg::op_norm;
use crate::model::{evolve, EvolutionMatrix, OperatorFamily};
use crate::rng;

/// Default relative tolerance of the range check `U(X) in Q^{1/2}(X)`.
pub const DEFAULT_RANGE_TOL: f64 = 1e-6;
const SAMPLE_TAG: u64 = 0x5341_4d50;

/// `(U(t, s), Q(t, s), Lambda(t, s))` for one time pair.
#[derive(Debug, Clone)]
pub struct SmoothingBundle {
    pub s: f64,
    pub t: f64,
    pub evolution: EvolutionMatrix,
    /// Centred law `N(0, Q(t, s))`.
    pub law: GaussianLaw,
    /// `Lambda = Q^{-1/2} U`.
    pub lambda: DMatrix<f64>,
    /// `Lambda` expressed in the eigenbasis of `Q`: `V^T Lambda`.
    pub lambda_eigen: DMatrix<f64>,
    pub lambda_norm: f64,
    pub range_residual: f64,
    pub range_tolerance: f64,
    pub degenerate: bool,
}

/// Serializable digest of a bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleSummary {
    pub s: f64,
    pub t: f64,
    pub lambda_norm: f64,
    pub range_residual: f64,
    pub degenerate: bool,
    pub trace: f64,
    pub effective_rank: usize,
    pub evolution_norm: f64,
}

pub fn smoothing_bundle(model: &OperatorFamily, s: f64, t: f64) -> Result<SmoothingBundle> {
    smoothing_bundle_with(model, s, t, QuadOptions::default(), DEFAULT_RANGE_TOL)
}

pub fn smoothing_bundle_with(
    model: &OperatorFamily,
    s: f64,
    t: f64,
    opts: QuadOptions,
    range_tolerance: f64,
) -> Result<SmoothingBundle> {
    model.check_times(s, t)?;
    if s >= t {
        return Err(Error::NoSmoothing { s, t });
    }
    let evolution = evolve(model, s, t)?;
    let law = covariance_with(model, s, t, opts)?;
    Ok(assemble(s, t, evolution, law, range_tolerance))
}

/// Builds `Lambda` and the range check from `U` and the centred law.
pub(crate) fn assemble(
    s: f64,
    t: f64,
    evolution: EvolutionMatrix,
    law: GaussianLaw,
    range_tolerance: f64,
) -> SmoothingBundle {
    let n = evolution.entries.nrows();
    let u = &evolution.entries;
    let root = &law.root;

    let mut lambda_eigen = DMatrix::<f64>::zeros(n, n);
    let mut range_residual: f64 = 0.0;
    for j in 0..n {
        let col = u.column(j).into_owned();
        let w = root.whiten(&col);
        lambda_eigen.set_column(j, &w);
        let norm = col.norm();
        if norm > 0.0 {
            // component of U e_j outside the retained eigenspace
            let projected = root.color(&w);
            range_residual = range_residual.max((col - projected).norm() / norm);
        }
    }
    let lambda = if root.is_diagonal() { lambda_eigen.clone() } else { &root.eigenvectors * &lambda_eigen };
    let lambda_norm = op_norm(&lambda);
    SmoothingBundle {
        s,
        t,
        evolution,
        law,
        lambda,
        lambda_eigen,
        lambda_norm,
        range_residual,
        range_tolerance,
        degenerate: range_residual > range_tolerance,
    }
}

impl SmoothingBundle {
    pub fn dimension(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn require_nondegenerate(&self) -> Result<()> {
        if self.degenerate {
            return Err(Error::DegenerateBundle {
                s: self.s,
                t: self.t,
                residual: self.range_residual,
                tolerance: self.range_tolerance,
            });
        }
        Ok(())
    }

    pub fn summary(&self) -> BundleSummary {
        BundleSummary {
            s: self.s,
            t: self.t,
            lambda_norm: self.lambda_norm,
            range_residual: self.range_residual,
            degenerate: self.degenerate,
            trace: self.law.trace(),
            effective_rank: self.law.effective_rank(),
            evolution_norm: op_norm(&self.evolution.entries),
        }
    }
}

/// Cameron–Martin density of `N(eps U h, Q)` against `N(0, Q)` at `y`:
/// `exp(-eps^2 |Lambda h|^2 / 2 + eps <Lambda h, Q^{-1/2} y>)`.
pub fn cm_weight(bundle: &SmoothingBundle, h: &DVector<f64>, eps: f64, y: &DVector<f64>) -> Result<f64> {
    bundle.require_nondegenerate()?;
    let n = bundle.dimension();
    for v in [h, y] {
        if v.len() != n {
            return Err(Error::Dimension { expected: n, got: v.len() });
        }
    }
    if eps == 0.0 {
        return Ok(1.0);
    }
    let lh = &bundle.lambda_eigen * h;
    let wy = bundle.law.root.whiten(y);
    Ok((-0.5 * eps * eps * lh.norm_squared() + eps * lh.dot(&wy)).exp())
}

/// `count` draws `m + R z` as rows of a matrix. Rows are produced in
/// fixed-size blocks with one counter stream per block, so the output does
/// not depend on the number of worker threads.
pub fn sample(law: &GaussianLaw, count: usize, seed: u64) -> DMatrix<f64> {
    let n = law.dimension();
    let r = law.sqrt_factor();
    let mut rows = vec![0.0; count * n];
    rows.par_chunks_mut(rng::BLOCK * n.max(1)).enumerate().for_each(|(b, chunk)| {
        let mut stream = rng::stream(seed, &[SAMPLE_TAG, b as u64]);
        let mut z = DVector::<f64>::zeros(n);
        for row in chunk.chunks_mut(n.max(1)) {
            rng::fill_normal(&mut stream, z.as_mut_slice());
            let y = &law.mean + r * &z;
            row.copy_from_slice(y.as_slice());
        }
    });
    DMatrix::from_row_slice(count, n, &rows)
}

/// Traces of the leading principal blocks `Q_{N'}` of `Q(t, s)`.
pub fn trace_truncation_curve(
    model: &OperatorFamily,
    s: f64,
    t: f64,
    truncations: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let n = model.dimension();
    if truncations.windows(2).any(|w| w[1] <= w[0]) || truncations.iter().any(|k| *k == 0 || *k > n) {
        return Err(Error::InvalidParameter(format!(
            "truncations must be increasing within 1..={n}, got {truncations:?}"
        )));
    }
    let law = covariance_with(model, s, t, QuadOptions::default())?;
    let diag = law.covariance.diagonal();
    let mut out = Vec::with_capacity(truncations.len());
    let mut acc = 0.0;
    let mut k = 0;
    for &m in truncations {
        while k < m {
            acc += diag[k].max(0.0);
            k += 1;
        }
        out.push((m, acc));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lambda_closed_form() {
        let m = OperatorFamily::scalar_constant("ou", 1, 1.0, -1.0, 1.0).unwrap();
        let b = smoothing_bundle(&m, 0.0, 1.0).unwrap();
        let q = (1.0 - (-2f64).exp()) / 2.0;
        let want = (-1f64).exp() / q.sqrt();
        assert!((b.lambda[(0, 0)] - want).abs() < 1e-12 * want);
        assert!(!b.degenerate);
    }

    #[test]
    fn brownian_lambda() {
        let m = OperatorFamily::scalar_constant("bm", 3, 1.0, 0.0, 1.0).unwrap();
        let b = smoothing_bundle(&m, 0.2, 0.6).unwrap();
        let want = 0.4f64.powf(-0.5);
        assert!((&b.lambda - DMatrix::identity(3, 3) * want).amax() < 1e-12);
        assert!((b.lambda_norm - want).abs() < 1e-12);
    }

    #[test]
    fn zero_shift_weight_is_one() {
        let m = OperatorFamily::scalar_constant("ou", 2, 1.0, -1.0, 1.0).unwrap();
        let b = smoothing_bundle(&m, 0.0, 0.5).unwrap();
        let y = DVector::from_vec(vec![0.3, -2.0]);
        let h = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(cm_weight(&b, &h, 0.0, &y).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_when_noise_is_missing() {
        let m = OperatorFamily::scalar_constant("ode", 1, 1.0, -1.0, 0.0).unwrap();
        let b = smoothing_bundle(&m, 0.0, 1.0).unwrap();
        assert!(b.degenerate);
        assert!(cm_weight(&b, &DVector::from_element(1, 1.0), 0.1, &DVector::zeros(1)).is_err());
    }

    #[test]
    fn zero_root_samples_are_the_mean() {
        let law = GaussianLaw::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::zeros(2, 2), 1e-12).unwrap();
        let ys = sample(&law, 10, 3);
        for i in 0..10 {
            assert_eq!(ys[(i, 0)], 1.0);
            assert_eq!(ys[(i, 1)], 2.0);
        }
    }

    #[test]
    fn truncation_curve_reaches_full_trace() {
        let m = OperatorFamily::scalar_constant("ou", 4, 1.0, -1.0, 1.0).unwrap();
        let c = trace_truncation_curve(&m, 0.0, 1.0, &[1, 2, 4]).unwrap();
        let full = covariance_with(&m, 0.0, 1.0, QuadOptions::default()).unwrap().trace();
        assert!((c[2].1 - full).abs() < 1e-15);
        assert!(c.windows(2).all(|w| w[1].1 >= w[0].1));
        assert!(trace_truncation_curve(&m, 0.0, 1.0, &[2, 2]).is_err());
    }
}
