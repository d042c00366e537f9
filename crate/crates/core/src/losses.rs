//! Training objectives: absolute MSE and relative MSE with a
//! non-monotonicity hinge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MseAbs,
    RmseRel,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::MseAbs => "mse_abs",
            LossKind::RmseRel => "rmse_rel",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse_abs" => Ok(LossKind::MseAbs),
            "rmse_rel" => Ok(LossKind::RmseRel),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (expected mse_abs or rmse_rel)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Added to the target in the relative-error denominator.
    pub epsilon: f64,
    /// Weight of the non-monotonicity hinge.
    pub penalty_weight: f64,
}

impl LossSpec {
    pub const DEFAULT_EPSILON: f64 = 1e-8;
    pub const DEFAULT_PENALTY: f64 = 100.0;

    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            epsilon: Self::DEFAULT_EPSILON,
            penalty_weight: Self::DEFAULT_PENALTY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("loss epsilon must be positive".into()));
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::Config("penalty weight must be non-negative".into()));
        }
        Ok(())
    }

    /// Loss value and gradient with respect to `pred`.
    pub fn evaluate(&self, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.kind {
            LossKind::MseAbs => mse_abs(pred, target),
            LossKind::RmseRel => rmse_rel(pred, target, self),
        }
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::new(LossKind::MseAbs)
    }
}

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction length {} != target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty prediction".into()));
    }
    Ok(())
}

/// Mean of squared differences.
pub fn mse_abs(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(pred, target)?;
    let n = pred.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, y)| {
            let d = p - y;
            value += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((value / n, grad))
}

/// Mean squared relative error `((p - y) / (y + ε))²` plus
/// `λ · mean_t relu(p_{t-1} - p_t)`.
pub fn rmse_rel(pred: &[f64], target: &[f64], spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    check(pred, target)?;
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad: Vec<f64> = pred
        .iter()
        .zip(target)
        .map(|(p, y)| {
            let denom = y + spec.epsilon;
            let r = (p - y) / denom;
            value += r * r;
            2.0 * r / denom / n
        })
        .collect();
    value /= n;

    if pred.len() > 1 && spec.penalty_weight > 0.0 {
        let pairs = (pred.len() - 1) as f64;
        let w = spec.penalty_weight / pairs;
        let mut hinge = 0.0;
        for t in 1..pred.len() {
            let drop = pred[t - 1] - pred[t];
            if drop > 0.0 {
                hinge += drop;
                grad[t - 1] += w;
                grad[t] -= w;
            }
        }
        value += spec.penalty_weight * hinge / pairs;
    }
    Ok((value, grad))
}
