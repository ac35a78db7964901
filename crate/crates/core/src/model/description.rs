//! JSON model descriptions.
//!
//! ```json
//! {"type": "scalar",   "N": 1,   "T": 1.0, "params": {"drift": -1.0, "diffusion": 1.0}}
//! {"type": "diagonal", "N": 128, "T": 1.0, "params": {"a": 2.0, "b": 1.0}}
//! {"type": "dense",    "N": 2,   "T": 1.0, "table": {"times": [0.0, 1.0], "drift": [...], "diffusion": [...]}}
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{make_example1, Example1Params, OperatorFamily};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Scalar {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "T")]
        horizon: f64,
        params: ScalarParams,
    },
    Diagonal {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "T")]
        horizon: f64,
        #[serde(default)]
        params: DiagonalParams,
    },
    Dense {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "T")]
        horizon: f64,
        table: DenseTable,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarParams {
    pub drift: f64,
    pub diffusion: f64,
    #[serde(default)]
    pub forcing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagonalParams {
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps: f64,
    pub omega: f64,
}

impl Default for DiagonalParams {
    fn default() -> Self {
        let d = Example1Params::default();
        DiagonalParams { a: d.a, b: d.b, c1: d.c1, c2: d.c2, eps: d.eps, omega: d.omega }
    }
}

/// Coefficients sampled on a time grid, linearly interpolated in between
/// and held constant outside. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseTable {
    pub times: Vec<f64>,
    pub drift: Vec<Vec<Vec<f64>>>,
    pub diffusion: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<Vec<Vec<f64>>>,
}

impl ModelSpec {
    pub fn scalar_ou() -> Self {
        ModelSpec::Scalar {
            n: 1,
            horizon: 1.0,
            params: ScalarParams { drift: -1.0, diffusion: 1.0, forcing: 0.0 },
        }
    }

    pub fn heat(n: usize) -> Self {
        ModelSpec::Scalar {
            n,
            horizon: 1.0,
            params: ScalarParams { drift: 0.0, diffusion: std::f64::consts::SQRT_2, forcing: 0.0 },
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            ModelSpec::Scalar { n, .. } | ModelSpec::Diagonal { n, .. } | ModelSpec::Dense { n, .. } => *n,
        }
    }

    pub fn build(&self) -> Result<OperatorFamily> {
        match self {
            ModelSpec::Scalar { n, horizon, params } => {
                let fam = OperatorFamily::scalar_constant("scalar", *n, *horizon, params.drift, params.diffusion)?;
                if params.forcing != 0.0 {
                    let f = params.forcing;
                    let n = *n;
                    fam.with_forcing(Arc::new(move |_| DVector::from_element(n, f)))
                } else {
                    Ok(fam)
                }
            }
            ModelSpec::Diagonal { n, horizon, params } => {
                let p = Example1Params {
                    modes: *n,
                    a: params.a,
                    b: params.b,
                    c1: params.c1,
                    c2: params.c2,
                    eps: params.eps,
                    omega: params.omega,
                    horizon: *horizon,
                };
                Ok(make_example1(p)?.into_family())
            }
            ModelSpec::Dense { n, horizon, table } => table.build(*n, *horizon),
        }
    }
}

impl DenseTable {
    fn build(&self, n: usize, horizon: f64) -> Result<OperatorFamily> {
        let m = self.times.len();
        if m == 0 {
            return Err(Error::Model("dense table needs at least one time".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Model("table times must be strictly increasing".into()));
        }
        let drift = to_matrices("drift", &self.drift, m, n)?;
        let diffusion = to_matrices("diffusion", &self.diffusion, m, n)?;
        let times = Arc::new(self.times.clone());
        let fam = OperatorFamily::dense(
            "dense",
            n,
            horizon,
            interpolate_matrices(times.clone(), drift),
            interpolate_matrices(times.clone(), diffusion),
        )?;
        match &self.forcing {
            None => Ok(fam),
            Some(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Model(format!("forcing table must be {m} rows of length {n}")));
                }
                let vecs: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_column_slice(r)).collect();
                fam.with_forcing(Arc::new(move |t| {
                    let (i, w) = locate(&times, t);
                    if w == 0.0 {
                        vecs[i].clone()
                    } else {
                        &vecs[i] * (1.0 - w) + &vecs[i + 1] * w
                    }
                }))
            }
        }
    }
}

fn to_matrices(name: &str, raw: &[Vec<Vec<f64>>], m: usize, n: usize) -> Result<Vec<DMatrix<f64>>> {
    if raw.len() != m {
        return Err(Error::Model(format!("{name} table has {} entries, expected {m}", raw.len())));
    }
    raw.iter()
        .map(|rows| {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::Model(format!("{name} entries must be {n}x{n}")));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        })
        .collect()
}

// Index of the left grid point and the interpolation weight towards the right one.
fn locate(times: &[f64], t: f64) -> (usize, f64) {
    let m = times.len();
    if m == 1 || t <= times[0] {
        return (0, 0.0);
    }
    if t >= times[m - 1] {
        return (m - 1, 0.0);
    }
    let i = times.partition_point(|x| *x <= t) - 1;
    (i, (t - times[i]) / (times[i + 1] - times[i]))
}

fn interpolate_matrices(times: Arc<Vec<f64>>, mats: Vec<DMatrix<f64>>) -> super::MatrixFn {
    Arc::new(move |t| {
        let (i, w) = locate(&times, t);
        if w == 0.0 {
            mats[i].clone()
        } else {
            &mats[i] * (1.0 - w) + &mats[i + 1] * w
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_variants() {
        let s: ModelSpec = serde_json::from_str(
            r#"{"type":"scalar","N":1,"T":1.0,"params":{"drift":-1.0,"diffusion":1.0}}"#,
        )
        .unwrap();
        assert_eq!(s, ModelSpec::scalar_ou());

        let d: ModelSpec =
            serde_json::from_str(r#"{"type":"diagonal","N":16,"T":1.0,"params":{"a":2,"b":1}}"#).unwrap();
        let fam = d.build().unwrap();
        assert_eq!(fam.dimension(), 16);

        let dense: ModelSpec = serde_json::from_str(
            r#"{"type":"dense","N":2,"T":1.0,"table":{"times":[0.0,1.0],
                "drift":[[[-1,0],[0,-1]],[[-3,0.5],[0,-1]]],
                "diffusion":[[[1,0],[0,1]],[[1,0],[0,1]]],
                "forcing":[[0,1],[2,1]]}}"#,
        )
        .unwrap();
        let fam = dense.build().unwrap();
        let a = fam.drift(0.5);
        assert!((a[(0, 0)] + 2.0).abs() < 1e-15);
        assert!((a[(0, 1)] - 0.25).abs() < 1e-15);
        assert!((fam.forcing(0.25)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_fields() {
        assert!(serde_json::from_str::<ModelSpec>(
            r#"{"type":"scalar","T":1.0,"params":{"drift":-1.0,"diffusion":1.0}}"#
        )
        .is_err());
        assert!(serde_json::from_str::<ModelSpec>(
            r#"{"type":"scalar","N":1,"T":1.0,"extra":3,"params":{"drift":-1.0,"diffusion":1.0}}"#
        )
        .is_err());
        assert!(serde_json::from_str::<ModelSpec>(
            r#"{"type":"diagonal","N":4,"T":1.0,"params":{"a":2,"zeta":1}}"#
        )
        .is_err());
    }

    #[test]
    fn defaults_are_materialized() {
        let d: ModelSpec = serde_json::from_str(r#"{"type":"diagonal","N":4,"T":1.0}"#).unwrap();
        let text = serde_json::to_string(&d).unwrap();
        assert!(text.contains("\"c1\":1.0"), "{text}");
        assert!(text.contains("\"eps\":0.25"), "{text}");
    }
}
