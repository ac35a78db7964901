use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ModeCoefficients, OperatorFamily};
use crate::error::{Error, Result};

/// Parameters of the built-in diagonal family
/// `alpha_k(t) = -k^a (c1 + eps sin(omega t))`,
/// `beta_k(t) = k^-b (1 + eps cos(omega t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example1Params {
    #[serde(rename = "N")]
    pub modes: usize,
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps: f64,
    pub omega: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl Default for Example1Params {
    fn default() -> Self {
        Example1Params {
            modes: 64,
            a: 2.0,
            b: 1.0,
            c1: 1.0,
            c2: 0.5,
            eps: 0.25,
            omega: 2.0 * std::f64::consts::PI,
            horizon: 1.0,
        }
    }
}

impl Example1Params {
    pub fn with_exponents(modes: usize, a: f64, b: f64) -> Self {
        Example1Params { modes, a, b, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.modes == 0 {
            return bad("mode count must be at least 1".into());
        }
        if !(self.a > 0.0) {
            return bad(format!("drift exponent a must be positive, got {}", self.a));
        }
        if !(self.b >= 0.0) {
            return bad(format!("diffusion decay b must be non-negative, got {}", self.b));
        }
        if !(self.c2 > 0.0 && self.c1 >= self.c2) {
            return bad(format!("need c1 >= c2 > 0, got c1 = {}, c2 = {}", self.c1, self.c2));
        }
        if !(0.0..1.0).contains(&self.eps) {
            return bad(format!("modulation amplitude must lie in [0, 1), got {}", self.eps));
        }
        if self.c1 - self.eps < self.c2 {
            return bad(format!(
                "modulation eps = {} pushes the decay below c2: c1 - eps = {} < {}",
                self.eps,
                self.c1 - self.eps,
                self.c2
            ));
        }
        if !(self.omega >= 0.0) {
            return bad(format!("modulation frequency must be non-negative, got {}", self.omega));
        }
        if !(self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        Ok(())
    }
}

/// The diagonal model together with its derived constants.
#[derive(Debug, Clone)]
pub struct DiagonalModel {
    pub params: Example1Params,
    family: OperatorFamily,
}

pub fn make_example1(params: Example1Params) -> Result<DiagonalModel> {
    params.validate()?;
    let Example1Params { modes, a, b, c1, eps, omega, horizon, .. } = params;
    let coefficients = ModeCoefficients::Separable {
        drift_scale: (1..=modes).map(|k| -(k as f64).powf(a)).collect(),
        drift_profile: Arc::new(move |t| c1 + eps * (omega * t).sin()),
        diffusion_scale: (1..=modes).map(|k| (k as f64).powf(-b)).collect(),
        diffusion_profile: Arc::new(move |t| 1.0 + eps * (omega * t).cos()),
    };
    let family = OperatorFamily::diagonal("example1", horizon, coefficients)?;
    Ok(DiagonalModel { params, family })
}

impl DiagonalModel {
    pub fn family(&self) -> &OperatorFamily {
        &self.family
    }

    pub fn into_family(self) -> OperatorFamily {
        self.family
    }

    /// Predicted blow-up exponent of `|Lambda(t, s)|`.
    pub fn theta_star(&self) -> f64 {
        0.5 + self.params.b / self.params.a
    }

    fn profile_range(&self) -> (f64, f64) {
        let p = &self.params;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=2000 {
            let t = p.horizon * i as f64 / 2000.0;
            let v = p.c1 + p.eps * (p.omega * t).sin();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// `lambda_k = max_t alpha_k(t)`, sampled on a fine grid.
    pub fn lambda(&self) -> Vec<f64> {
        let (lo, _) = self.profile_range();
        (1..=self.params.modes).map(|k| -(k as f64).powf(self.params.a) * lo).collect()
    }

    /// `mu_k = min_t alpha_k(t)`.
    pub fn mu(&self) -> Vec<f64> {
        let (_, hi) = self.profile_range();
        (1..=self.params.modes).map(|k| -(k as f64).powf(self.params.a) * hi).collect()
    }

    /// Uniform bound `M >= |beta_k(t)|`.
    pub fn diffusion_bound(&self) -> f64 {
        1.0 + self.params.eps
    }

    /// `sup_t |beta_k(t)|` per mode.
    pub fn diffusion_sup(&self) -> Vec<f64> {
        (1..=self.params.modes)
            .map(|k| (k as f64).powf(-self.params.b) * (1.0 + self.params.eps))
            .collect()
    }

    /// `sum_k |beta_k|_inf^2 / |lambda_k|` over the retained modes.
    pub fn trace_proxy(&self) -> f64 {
        self.diffusion_sup()
            .iter()
            .zip(self.lambda())
            .map(|(b, l)| b * b / l.abs())
            .sum()
    }

    /// Tail `sum_{k > n} |beta_k|^2 / |2 lambda_k|`, bounding the trace
    /// lost by truncating to the first `n` modes.
    pub fn trace_tail(&self, n: usize) -> f64 {
        self.diffusion_sup()
            .iter()
            .zip(self.lambda())
            .skip(n)
            .map(|(b, l)| b * b / (2.0 * l.abs()))
            .sum()
    }

    /// Interval `[y_lo, y_hi]` of `y = k^a (t - s)` on which the per-mode
    /// lower-bound profile stays above a quarter of its maximum.
    pub fn saturation_window(&self) -> (f64, f64) {
        let (lo, hi) = self.profile_range();
        let p = 2.0 * self.params.b / self.params.a + 1.0;
        let profile = |y: f64| y.powf(p) * (-2.0 * hi * y).exp() / (-(-2.0 * lo * y).exp_m1());
        let ys: Vec<f64> = (0..4000).map(|i| 10f64.powf(-4.0 + 6.0 * i as f64 / 3999.0)).collect();
        let vals: Vec<f64> = ys.iter().map(|&y| profile(y)).collect();
        let peak = vals.iter().cloned().fold(0.0, f64::max);
        let inside: Vec<f64> = ys
            .iter()
            .zip(&vals)
            .filter(|(_, v)| **v >= 0.25 * peak)
            .map(|(y, _)| *y)
            .collect();
        (inside[0], *inside.last().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_star_values() {
        for (a, b, want) in [(2.0, 1.0, 1.0), (2.0, 0.0, 0.5), (1.0, 1.0, 1.5)] {
            let m = make_example1(Example1Params::with_exponents(8, a, b)).unwrap();
            assert_eq!(m.theta_star(), want);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let base = Example1Params::default();
        for p in [
            Example1Params { a: 0.0, ..base },
            Example1Params { b: -1.0, ..base },
            Example1Params { modes: 0, ..base },
            Example1Params { c1: 0.4, c2: 0.5, ..base },
            Example1Params { eps: 1.0, ..base },
            Example1Params { eps: 0.6, ..base },
        ] {
            assert!(make_example1(p).is_err(), "{p:?}");
        }
    }

    #[test]
    fn drift_is_uniformly_negative_and_diffusion_bounded() {
        let m = make_example1(Example1Params::default()).unwrap();
        assert!(m.lambda().iter().all(|l| *l < 0.0));
        let modes = m.family().modes().unwrap();
        for i in 0..50 {
            let t = i as f64 / 49.0;
            for k in 0..m.params.modes {
                assert!(modes.diffusion(k, t).abs() <= m.diffusion_bound() + 1e-15);
            }
        }
        assert!(m.trace_proxy().is_finite());
        assert!(m.trace_tail(m.params.modes) == 0.0);
    }
}
