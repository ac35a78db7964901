//! Multi-scale Hölder and Zygmund probing, blow-up exponent fits, and the
//! verification suites built on them.

mod suites;
mod theta;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::op_norm;
use crate::rng;

pub use suites::*;
pub use theta::*;

/// Slope below which a per-scale profile counts as growing.
pub const GROWTH_SLOPE: f64 = -0.1;
const PROBE_TAG: u64 = 0x5052_4f42;

/// How to draw a probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub points: usize,
    pub directions: usize,
    pub scales: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub radius: f64,
    pub seed: u64,
    /// Base points always included ahead of the random ones.
    pub anchors: Vec<Vec<f64>>,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            points: 16,
            directions: 16,
            scales: 12,
            delta_min: 1e-4,
            delta_max: 1e-1,
            radius: 2.0,
            seed: 0,
            anchors: Vec::new(),
        }
    }
}

/// Base points, unit directions and log-spaced magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub base_points: Vec<DVector<f64>>,
    pub directions: Vec<DVector<f64>>,
    pub magnitudes: Vec<f64>,
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

impl ProbeSet {
    pub fn new(base_points: Vec<DVector<f64>>, directions: Vec<DVector<f64>>, magnitudes: Vec<f64>) -> Self {
        ProbeSet { base_points, directions, magnitudes }
    }

    /// Seeded base points uniform in the ball of the given radius and
    /// directions uniform on the unit sphere.
    pub fn generate(dimension: usize, settings: &ProbeSettings) -> Self {
        let mut stream = rng::stream(settings.seed, &[PROBE_TAG, dimension as u64]);
        let gaussian = |stream: &mut rand_chacha::ChaCha8Rng| -> DVector<f64> {
            DVector::from_iterator(dimension, (0..dimension).map(|_| StandardNormal.sample(stream)))
        };
        let mut base_points: Vec<DVector<f64>> =
            settings.anchors.iter().map(|a| DVector::from_column_slice(a)).collect();
        for _ in 0..settings.points {
            let g = gaussian(&mut stream);
            let r: f64 = stream.random::<f64>().powf(1.0 / dimension as f64) * settings.radius;
            base_points.push(g.normalize() * r);
        }
        // the unit sphere of the line is {+1, -1}
        let directions = if dimension == 1 {
            [1.0, -1.0].iter().take(settings.directions).map(|d| DVector::from_element(1, *d)).collect()
        } else {
            (0..settings.directions).map(|_| gaussian(&mut stream).normalize()).collect()
        };
        let magnitudes = log_spaced(settings.delta_min, settings.delta_max, settings.scales);
        ProbeSet { base_points, directions, magnitudes }
    }

    pub fn dimension(&self) -> usize {
        self.base_points.first().or(self.directions.first()).map_or(0, |v| v.len())
    }

    /// Every point a first-difference probe evaluates: base points first,
    /// then `x_i + delta_l e_j` in (i, j, l) order.
    fn first_difference_points(&self) -> Vec<DVector<f64>> {
        let mut pts = self.base_points.clone();
        for x in &self.base_points {
            for e in &self.directions {
                for d in &self.magnitudes {
                    pts.push(x + e * *d);
                }
            }
        }
        pts
    }

    fn second_difference_points(&self) -> Vec<DVector<f64>> {
        let mut pts = self.base_points.clone();
        for x in &self.base_points {
            for e in &self.directions {
                for d in &self.magnitudes {
                    pts.push(x + e * *d);
                    pts.push(x + e * (2.0 * d));
                }
            }
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Bounded,
    Growing,
}

/// Per-scale supremum of difference quotients with its log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormReport {
    pub exponent: f64,
    pub magnitudes: Vec<f64>,
    pub per_scale_sup: Vec<f64>,
    pub global: f64,
    pub slope: f64,
    pub verdict: Verdict,
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

impl SeminormReport {
    pub fn from_scales(exponent: f64, magnitudes: Vec<f64>, per_scale_sup: Vec<f64>) -> Self {
        let global = per_scale_sup.iter().cloned().fold(0.0, f64::max);
        let (lx, ly): (Vec<f64>, Vec<f64>) = magnitudes
            .iter()
            .zip(&per_scale_sup)
            .filter(|(_, v)| **v > 0.0)
            .map(|(d, v)| (d.ln(), v.ln()))
            .unzip();
        let slope = if lx.len() >= 2 { fit_line(&lx, &ly).0 } else { 0.0 };
        let verdict = if slope < GROWTH_SLOPE { Verdict::Growing } else { Verdict::Bounded };
        SeminormReport { exponent, magnitudes, per_scale_sup, global, slope, verdict }
    }

    /// The same differences re-weighted as quotients at another exponent.
    pub fn at_exponent(&self, exponent: f64) -> Self {
        let sup = self
            .magnitudes
            .iter()
            .zip(&self.per_scale_sup)
            .map(|(d, v)| v * d.powf(self.exponent - exponent))
            .collect();
        Self::from_scales(exponent, self.magnitudes.clone(), sup)
    }
}

/// Batch evaluator for matrix-valued fields; differences are measured in
/// the spectral norm (Euclidean for column vectors).
pub type BatchEval<'a> = dyn Fn(&[DVector<f64>]) -> Vec<DMatrix<f64>> + 'a;

/// `max_{i,j} |F(x_i + delta e_j) - F(x_i)| / delta^alpha` per scale.
pub fn holder_seminorm_batch(eval: &BatchEval<'_>, alpha: f64, probes: &ProbeSet) -> SeminormReport {
    let values = eval(&probes.first_difference_points());
    let p = probes.base_points.len();
    let (nd, nl) = (probes.directions.len(), probes.magnitudes.len());
    let mut sup = vec![0.0f64; nl];
    for i in 0..p {
        for j in 0..nd {
            for (l, d) in probes.magnitudes.iter().enumerate() {
                let v = &values[p + (i * nd + j) * nl + l];
                let q = op_norm(&(v - &values[i])) / d.powf(alpha);
                sup[l] = sup[l].max(q);
            }
        }
    }
    SeminormReport::from_scales(alpha, probes.magnitudes.clone(), sup)
}

/// `max_{i,j} |F(x_i + 2 delta e_j) - 2 F(x_i + delta e_j) + F(x_i)| / delta` per scale.
pub fn zygmund_seminorm_batch(eval: &BatchEval<'_>, probes: &ProbeSet) -> SeminormReport {
    let values = eval(&probes.second_difference_points());
    let p = probes.base_points.len();
    let (nd, nl) = (probes.directions.len(), probes.magnitudes.len());
    let mut sup = vec![0.0f64; nl];
    for i in 0..p {
        for j in 0..nd {
            for (l, d) in probes.magnitudes.iter().enumerate() {
                let k = p + 2 * ((i * nd + j) * nl + l);
                let second = &values[k + 1] - &values[k] * 2.0 + &values[i];
                sup[l] = sup[l].max(op_norm(&second) / d);
            }
        }
    }
    SeminormReport::from_scales(1.0, probes.magnitudes.clone(), sup)
}

fn scalar_batch<'a, F: Fn(&DVector<f64>) -> f64 + Sync + 'a>(f: &'a F) -> impl Fn(&[DVector<f64>]) -> Vec<DMatrix<f64>> + 'a {
    move |xs: &[DVector<f64>]| {
        use rayon::prelude::*;
        xs.par_iter().map(|x| DMatrix::from_element(1, 1, f(x))).collect()
    }
}

pub fn holder_seminorm<F: Fn(&DVector<f64>) -> f64 + Sync>(f: &F, alpha: f64, probes: &ProbeSet) -> SeminormReport {
    holder_seminorm_batch(&scalar_batch(f), alpha, probes)
}

pub fn zygmund_seminorm<F: Fn(&DVector<f64>) -> f64 + Sync>(f: &F, probes: &ProbeSet) -> SeminormReport {
    zygmund_seminorm_batch(&scalar_batch(f), probes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(base: &[f64], dirs: &[f64]) -> ProbeSet {
        ProbeSet::new(
            base.iter().map(|b| DVector::from_element(1, *b)).collect(),
            dirs.iter().map(|d| DVector::from_element(1, *d)).collect(),
            log_spaced(1e-4, 1e-1, 7),
        )
    }

    #[test]
    fn square_root_at_origin() {
        let r = holder_seminorm(&|x: &DVector<f64>| x[0].abs().sqrt(), 0.5, &line(&[0.0], &[1.0]));
        assert!(r.per_scale_sup.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(r.verdict, Verdict::Bounded);
    }

    #[test]
    fn zygmund_of_square_and_abs() {
        let r = zygmund_seminorm(&|x: &DVector<f64>| x[0] * x[0], &line(&[0.3], &[1.0]));
        for (d, v) in r.magnitudes.iter().zip(&r.per_scale_sup) {
            assert!((v - 2.0 * d).abs() < 1e-9 * d.max(1e-3));
        }
        assert!((r.slope - 1.0).abs() < 1e-6);
        // base point -delta on direction +1 for each delta
        let f = |x: &DVector<f64>| x[0].abs();
        for d in log_spaced(1e-4, 1e-1, 4) {
            let p = ProbeSet::new(vec![DVector::from_element(1, -d)], vec![DVector::from_element(1, 1.0)], vec![d]);
            let r = zygmund_seminorm(&f, &p);
            assert!((r.global - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn generated_probes_are_well_formed() {
        let p = ProbeSet::generate(3, &ProbeSettings { anchors: vec![vec![0.0; 3]], ..Default::default() });
        assert_eq!(p.base_points.len(), 17);
        assert!(p.directions.iter().all(|e| (e.norm() - 1.0).abs() < 1e-12));
        assert!(p.base_points.iter().all(|x| x.norm() <= 2.0 + 1e-12));
        assert!(p.magnitudes.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(p, ProbeSet::generate(3, &ProbeSettings { anchors: vec![vec![0.0; 3]], ..Default::default() }));
    }
}
