use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::is_diagonal;

/// Default relative eigenvalue clipping threshold.
pub const DEFAULT_CLIP: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;
const NEGATIVE_TOL: f64 = 1e-8;

/// Symmetric square root and pseudo-inverse square root of a PSD matrix,
/// stored through its eigendecomposition `Q = V diag(lambda) V^T`.
#[derive(Debug, Clone)]
pub struct PsdRoot {
    /// Eigenvalues before clipping.
    pub spectrum: DVector<f64>,
    /// Eigenvalues after clipping (zero on the discarded eigenspace).
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub clip_threshold: f64,
    retained: Vec<bool>,
    sqrt_factor: DMatrix<f64>,
    diagonal: bool,
}

/// Eigendecomposition-based square root with relative eigenvalue clipping.
pub fn psd_sqrt(q: &DMatrix<f64>, clip_threshold: f64) -> Result<PsdRoot> {
    if !q.is_square() {
        return Err(Error::Dimension { expected: q.nrows(), got: q.ncols() });
    }
    let n = q.nrows();
    let norm = q.amax();
    let asymmetry = (q - q.transpose()).amax();
    if asymmetry > SYMMETRY_TOL * norm {
        return Err(Error::NotSymmetric { asymmetry, norm });
    }
    let diagonal = is_diagonal(q);
    let (spectrum, eigenvectors) = if diagonal {
        (q.diagonal(), DMatrix::identity(n, n))
    } else {
        let sym = (q + q.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        (eig.eigenvalues, eig.eigenvectors)
    };
    let trace = q.trace();
    let min = spectrum.min();
    if min < -NEGATIVE_TOL * trace.abs() || (trace <= 0.0 && min < 0.0) {
        return Err(Error::NegativeSpectrum { eigenvalue: min, trace });
    }
    let top = spectrum.max().max(0.0);
    let retained: Vec<bool> = spectrum.iter().map(|&l| top > 0.0 && l > clip_threshold * top).collect();
    let eigenvalues = DVector::from_iterator(n, spectrum.iter().zip(&retained).map(|(l, r)| if *r { *l } else { 0.0 }));
    let sqrt_factor = if diagonal {
        DMatrix::from_diagonal(&eigenvalues.map(f64::sqrt))
    } else {
        let scaled = DMatrix::from_fn(n, n, |i, j| eigenvectors[(i, j)] * eigenvalues[j].sqrt());
        &scaled * eigenvectors.transpose()
    };
    Ok(PsdRoot { spectrum, eigenvalues, eigenvectors, clip_threshold, retained, sqrt_factor, diagonal })
}

impl PsdRoot {
    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Symmetric root `R` with `R R^T = Q` on the retained eigenspace.
    pub fn sqrt_factor(&self) -> &DMatrix<f64> {
        &self.sqrt_factor
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn retained(&self) -> &[bool] {
        &self.retained
    }

    pub fn rank(&self) -> usize {
        self.retained.iter().filter(|r| **r).count()
    }

    /// `diag(1/sqrt(lambda)) V^T y`, zero on the clipped modes.
    pub fn whiten(&self, y: &DVector<f64>) -> DVector<f64> {
        let c = if self.diagonal { y.clone() } else { self.eigenvectors.tr_mul(y) };
        DVector::from_iterator(
            c.len(),
            c.iter().enumerate().map(|(k, v)| if self.retained[k] { v / self.eigenvalues[k].sqrt() } else { 0.0 }),
        )
    }

    /// `V diag(sqrt(lambda)) z`: maps eigen-coordinates back to state space.
    pub fn color(&self, z: &DVector<f64>) -> DVector<f64> {
        let scaled = z.component_mul(&self.eigenvalues.map(f64::sqrt));
        if self.diagonal {
            scaled
        } else {
            &self.eigenvectors * scaled
        }
    }

    /// Applies the pseudo-inverse square root `Q^{-1/2}`.
    pub fn apply_pinv_sqrt(&self, y: &DVector<f64>) -> DVector<f64> {
        let w = self.whiten(y);
        if self.diagonal {
            w
        } else {
            &self.eigenvectors * w
        }
    }

    pub fn pinv_sqrt(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let inv = DVector::from_iterator(
            n,
            (0..n).map(|k| if self.retained[k] { 1.0 / self.eigenvalues[k].sqrt() } else { 0.0 }),
        );
        if self.diagonal {
            return DMatrix::from_diagonal(&inv);
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| self.eigenvectors[(i, j)] * inv[j]);
        &scaled * self.eigenvectors.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_root() {
        let r = psd_sqrt(&DMatrix::identity(3, 3), DEFAULT_CLIP).unwrap();
        assert_eq!(r.sqrt_factor(), &DMatrix::identity(3, 3));
        assert_eq!(r.pinv_sqrt(), DMatrix::identity(3, 3));
    }

    #[test]
    fn diagonal_with_kernel() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.0]));
        let r = psd_sqrt(&q, DEFAULT_CLIP).unwrap();
        assert_eq!(r.sqrt_factor().diagonal(), DVector::from_vec(vec![2.0, 1.0, 0.0]));
        let y = r.apply_pinv_sqrt(&DVector::from_vec(vec![2.0, 1.0, 1.0]));
        assert_eq!(y, DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert_eq!(r.rank(), 2);
    }

    #[test]
    fn rejects_asymmetric_and_negative() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(psd_sqrt(&q, DEFAULT_CLIP), Err(Error::NotSymmetric { .. })));
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(psd_sqrt(&q, DEFAULT_CLIP), Err(Error::NegativeSpectrum { .. })));
    }

    #[test]
    fn dense_reconstruction() {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, -0.3, 0.0, 2.0, 0.5, 0.4, -1.0, 1.5]);
        let q = &g * g.transpose();
        let r = psd_sqrt(&q, DEFAULT_CLIP).unwrap();
        let rr = r.sqrt_factor() * r.sqrt_factor().transpose();
        assert!((rr - &q).amax() <= 1e-12 * q.amax());
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let back = r.color(&r.whiten(&y));
        assert!((back - y).amax() < 1e-12);
    }
}
