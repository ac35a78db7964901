//! Kernel data for gaps too short to address by absolute times.
//!
//! Coefficients are frozen at the midpoint `s + gap / 2`, which is accurate
//! to relative order `gap` while keeping the gap itself exact.

use nalgebra::{DMatrix, DVector};

use super::{GaussianLaw, DEFAULT_CLIP};
use crate::error::Result;
use crate::linalg::is_diagonal;
use crate::model::{EvolutionMatrix, OperatorFamily};

/// Gaps below this fraction of the horizon use frozen coefficients.
pub const SHORT_GAP: f64 = 1e-6;

// (e^{x} - 1) / x, continuous at 0
fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0 + 0.5 * x
    } else {
        x.exp_m1() / x
    }
}

/// `(U, Q, g)` over `[s, s + gap]` with coefficients frozen at the midpoint.
pub(crate) fn frozen_parts(
    model: &OperatorFamily,
    s: f64,
    gap: f64,
) -> Result<(EvolutionMatrix, GaussianLaw, DVector<f64>)> {
    let n = model.dimension();
    let mid = s + 0.5 * gap;
    let a = model.drift(mid);
    let b = model.diffusion(mid);
    let bb = &b * b.transpose();
    let f = model.forcing(mid);
    let (u, q, g) = if is_diagonal(&a) && is_diagonal(&bb) {
        let mut u = DMatrix::zeros(n, n);
        let mut q = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for k in 0..n {
            let ak = a[(k, k)];
            u[(k, k)] = (ak * gap).exp();
            q[(k, k)] = bb[(k, k)] * gap * phi1(2.0 * ak * gap);
            g[k] = f[k] * gap * phi1(ak * gap);
        }
        (u, q, g)
    } else {
        // Van Loan: exp([[-A, BB^T], [0, A^T]] gap) = [[., F12], [0, F22]],
        // U = F22^T, Q = F22^T F12
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&(-&a));
        m.view_mut((0, n), (n, n)).copy_from(&bb);
        m.view_mut((n, n), (n, n)).copy_from(&a.transpose());
        let e = (m * gap).exp();
        let f22t = e.view((n, n), (n, n)).transpose();
        let q = &f22t * e.view((0, n), (n, n));
        let q = (&q + q.transpose()) * 0.5;
        // exp([[A, f], [0, 0]] gap) carries g in its last column
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&a);
        aug.view_mut((0, n), (n, 1)).copy_from(&f);
        let g = (aug * gap).exp().view((0, n), (n, 1)).into_owned();
        (f22t, q, DVector::from_column_slice(g.as_slice()))
    };
    let t = s + gap;
    let evolution = EvolutionMatrix { s, t, entries: u, tolerance: model.integrator_tolerance(), defect: 0.0, steps: 0 };
    let law = GaussianLaw::new(DVector::zeros(n), q, DEFAULT_CLIP)?;
    Ok((evolution, law, g))
}
