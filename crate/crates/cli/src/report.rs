//! Run summaries and artifact writers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// The estimate a suite checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimate {
    /// `|Lambda(t, s)| <= C (t - s)^{-theta}` and its optimality.
    #[serde(rename = "lambda-blowup")]
    LambdaBlowUp,
    /// `|D^n P_{s,t} phi| <= C_n |phi|_inf |Lambda(t, s)|^n`.
    SmoothingBound,
    /// Hölder gain of `1/theta` orders for the mild solution.
    SchauderEstimate,
    /// Zygmund regularity at integer borderline exponents.
    ZygmundEstimate,
    /// Interpolation between Hölder norms.
    InterpolationInequality,
    /// Gaussian law of the forward process.
    ProcessLaw,
    /// Mild solution `u = P phi - int P psi`.
    MildSolution,
    /// Pointwise backward Kolmogorov equation.
    KolmogorovEquation,
}

/// One assertion of a run. Hard checks decide the exit status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub hard: bool,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn hard(name: &str, passed: bool, value: f64, limit: f64) -> Self {
        Check { name: name.to_string(), hard: true, passed, value, limit }
    }

    pub fn soft(name: &str, passed: bool, value: f64, limit: f64) -> Self {
        Check { name: name.to_string(), hard: false, passed, value, limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub suite: String,
    pub estimate: Estimate,
    pub model: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Informational fitted constants.
    pub fitted: BTreeMap<String, f64>,
    pub tables: Vec<String>,
}

impl Summary {
    pub fn new(suite: &str, estimate: Estimate, model: &str, seed: u64) -> Self {
        Summary {
            suite: suite.to_string(),
            estimate,
            model: model.to_string(),
            seed,
            passed: true,
            checks: Vec::new(),
            fitted: BTreeMap::new(),
            tables: Vec::new(),
        }
    }

    pub fn check(&mut self, check: Check) {
        if check.hard && !check.passed {
            self.passed = false;
        }
        self.checks.push(check);
    }

    pub fn fit(&mut self, name: &str, value: f64) {
        self.fitted.insert(name.to_string(), value);
    }

    /// Names of the failing hard checks.
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| c.hard && !c.passed).map(|c| c.name.as_str()).collect()
    }
}

/// Writes tables into an output directory and records their names.
pub struct Artifacts {
    dir: PathBuf,
    tables: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf(), tables: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn table<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), CliError> {
        let file = format!("{name}.csv");
        let mut w = csv::Writer::from_path(self.dir.join(&file))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.tables.push(file);
        Ok(())
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    pub fn finish(self, mut summary: Summary) -> Result<Summary, CliError> {
        summary.tables = self.tables.clone();
        self.json("summary.json", &summary)?;
        Ok(summary)
    }
}
