//! Portfolio generating functions on the open unit simplex.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Tolerance on `sum(x) == 1` accepted by [`GenFnSpec::evaluate`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A function on the open simplex together with its gradient-like vector.
///
/// Implementations must be symmetric under permutations of their argument
/// and have a `gradient` whose `i`-th entry depends on `x` only through
/// `x[i]` and symmetric functions of `x`.
pub trait GeneratingFunction {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

/// `G(x) = -sum x_j log x_j`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Entropy;

impl GeneratingFunction for Entropy {
    fn value(&self, x: &[f64]) -> f64 {
        -x.iter().map(|&v| v * v.ln()).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = -v.ln() - 1.0;
        }
    }
}

/// `G(x) = 1 - sum x_j^2 / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic;

impl GeneratingFunction for Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        1.0 - 0.5 * x.iter().map(|&v| v * v).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = -v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenFnKind {
    Entropy,
    Quadratic,
}

impl GenFnKind {
    fn function(self) -> &'static dyn GeneratingFunction {
        match self {
            GenFnKind::Entropy => &Entropy,
            GenFnKind::Quadratic => &Quadratic,
        }
    }
}

impl fmt::Display for GenFnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenFnKind::Entropy => "entropy",
            GenFnKind::Quadratic => "quadratic",
        })
    }
}

impl FromStr for GenFnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(GenFnKind::Entropy),
            "quadratic" => Ok(GenFnKind::Quadratic),
            other => Err(Error::Config(format!(
                "unknown generating function `{other}` (expected entropy or quadratic)"
            ))),
        }
    }
}

/// A generating function divided by a positive normalization constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenFnSpec {
    pub kind: GenFnKind,
    normalization: f64,
}

/// Normalized value and gradient at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GenFnEval {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Normalization constant the evaluation was divided by.
    pub normalization: f64,
}

impl GenFnSpec {
    pub fn new(kind: GenFnKind) -> Self {
        GenFnSpec {
            kind,
            normalization: 1.0,
        }
    }

    pub fn with_normalization(kind: GenFnKind, normalization: f64) -> Result<Self> {
        if !(normalization > 0.0) || !normalization.is_finite() {
            return Err(Error::Domain(format!(
                "normalization constant {normalization} must be positive and finite"
            )));
        }
        Ok(GenFnSpec {
            kind,
            normalization,
        })
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<GenFnEval> {
        check_simplex(x)?;
        let f = self.kind.function();
        let mut grad = vec![0.0; x.len()];
        f.gradient(x, &mut grad);
        let c = self.normalization;
        for g in grad.iter_mut() {
            *g /= c;
        }
        Ok(GenFnEval {
            value: f.value(x) / c,
            grad,
            normalization: c,
        })
    }

    /// Same kind, rescaled so that its value at `x0` is one.
    pub fn calibrate(&self, x0: &[f64]) -> Result<GenFnSpec> {
        check_simplex(x0)?;
        let raw = self.kind.function().value(x0);
        if !(raw > 0.0) || !raw.is_finite() {
            return Err(Error::Calibration { value: raw });
        }
        GenFnSpec::with_normalization(self.kind, raw)
    }
}

fn check_simplex(x: &[f64]) -> Result<()> {
    if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "component {i} is {v}, expected a positive weight"
        )));
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Simplex { sum });
    }
    Ok(())
}
