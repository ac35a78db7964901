//! Small dense linear-algebra helpers.

use nalgebra::DMatrix;

/// Spectral norm (largest singular value). Column vectors use the
/// Euclidean norm, diagonal matrices the largest absolute entry.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.norm();
    }
    if is_diagonal(m) {
        return m.diagonal().amax();
    }
    m.singular_values().max()
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| i == j || m[(i, j)] == 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_rotation_scaled() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -3.0, 3.0, 0.0]);
        assert!((op_norm(&m) - 3.0).abs() < 1e-12);
        let d = DMatrix::from_row_slice(2, 2, &[-5.0, 0.0, 0.0, 2.0]);
        assert_eq!(op_norm(&d), 5.0);
    }
}
