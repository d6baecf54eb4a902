//! Training objectives: MSE, MAE and the decomposition-based loss.
//!
//! The decomposition-based loss splits prediction and target over the
//! forecast horizon into EMA trend and seasonal parts, scores the seasonal
//! part with a squared error and the trend part with an absolute error, and
//! rescales the trend term by the detached ratio `L_S / (L_T + ε)` so both
//! terms live on the seasonal loss scale:
//!
//! ```text
//! total = β·L_S + (1 − β)·L_T·stopgrad(L_S / (L_T + ε))
//! ```
//!
//! Both component losses are mean-reduced over every element.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decomp::{ema_decompose, SmoothingFactor};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbLossConfig {
    pub alpha: SmoothingFactor,
    pub beta: f64,
    pub epsilon: f64,
}

impl DbLossConfig {
    pub const DEFAULT_ALPHA: f64 = 0.3;
    pub const DEFAULT_BETA: f64 = 0.5;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(alpha: SmoothingFactor, beta: f64, epsilon: f64) -> Result<Self> {
        let cfg = Self { alpha, beta, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

impl Default for DbLossConfig {
    fn default() -> Self {
        Self {
            alpha: SmoothingFactor::new(Self::DEFAULT_ALPHA).expect("default alpha"),
            beta: Self::DEFAULT_BETA,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

/// Result of [`db_loss`]. `total` carries the graph for backpropagation; the
/// component tensors stay attached too, so each can be differentiated alone.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub total: Tensor,
    pub seasonal: Tensor,
    pub trend: Tensor,
    pub alignment_ratio: f64,
}

impl LossReport {
    pub fn total_value(&self) -> f64 {
        self.total.values()[0]
    }

    pub fn seasonal_loss(&self) -> f64 {
        self.seasonal.values()[0]
    }

    pub fn trend_loss(&self) -> f64 {
        self.trend.values()[0]
    }
}

fn same_shape(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return dim_err(format!(
            "prediction shape {:?} differs from target shape {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target)?;
    pred.sub(target)?.square()?.mean()
}

/// Mean absolute error over all elements.
pub fn mae(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target)?;
    pred.sub(target)?.abs()?.mean()
}

fn component(name: &str, r: Result<Tensor>) -> Result<Tensor> {
    r.map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("{name} loss is not finite: {msg}")),
        other => other,
    })
}

/// Decomposition-based loss over `[B, F, N]` predictions.
pub fn db_loss(pred: &Tensor, target: &Tensor, cfg: &DbLossConfig) -> Result<LossReport> {
    same_shape(pred, target)?;
    cfg.validate()?;
    let p = ema_decompose(pred, cfg.alpha)?;
    let y = ema_decompose(target, cfg.alpha)?;

    let seasonal = component("seasonal", p.seasonal.sub(&y.seasonal)?.square().and_then(|d| d.mean()))?;
    let trend = component("trend", p.trend.sub(&y.trend)?.abs().and_then(|d| d.mean()))?;

    let alignment_ratio = seasonal.values()[0] / (trend.values()[0] + cfg.epsilon);
    if !alignment_ratio.is_finite() {
        return Err(Error::Numeric(format!("alignment ratio is not finite ({alignment_ratio})")));
    }
    let ratio = Tensor::scalar(alignment_ratio);
    let aligned = component("aligned trend", trend.mul(&ratio))?;
    let total = component(
        "total",
        seasonal
            .mul_scalar(cfg.beta)
            .and_then(|s| aligned.mul_scalar(1.0 - cfg.beta).and_then(|t| s.add(&t))),
    )?;
    Ok(LossReport {
        total,
        seasonal,
        trend,
        alignment_ratio,
    })
}

/// Squared-error split of a decomposed residual into its uncoupled and
/// cross parts: `Σ(e_T + e_S)² = ideal + cross`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossTerm {
    pub ideal: f64,
    pub cross: f64,
}

pub fn mse_cross_term(
    pred_trend: &Tensor,
    pred_seasonal: &Tensor,
    target_trend: &Tensor,
    target_seasonal: &Tensor,
) -> Result<CrossTerm> {
    same_shape(pred_trend, pred_seasonal)?;
    same_shape(pred_trend, target_trend)?;
    same_shape(pred_trend, target_seasonal)?;
    let mut ideal = 0.0;
    let mut cross = 0.0;
    let parts = pred_trend
        .values()
        .iter()
        .zip(pred_seasonal.values())
        .zip(target_trend.values().iter().zip(target_seasonal.values()));
    for ((pt, ps), (tt, ts)) in parts {
        let et = tt - pt;
        let es = ts - ps;
        ideal += et * et + es * es;
        cross += 2.0 * et * es;
    }
    Ok(CrossTerm { ideal, cross })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
    #[serde(rename = "dbloss")]
    DbLoss,
}

impl LossKind {
    pub const NAMES: [&'static str; 3] = ["mse", "mae", "dbloss"];

    /// Scalar training objective for this loss.
    pub fn objective(self, pred: &Tensor, target: &Tensor, db: &DbLossConfig) -> Result<Tensor> {
        match self {
            LossKind::Mse => mse(pred, target),
            LossKind::Mae => mae(pred, target),
            LossKind::DbLoss => db_loss(pred, target, db).map(|r| r.total),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::DbLoss => "dbloss",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "dbloss" => Ok(LossKind::DbLoss),
            other => Err(Error::Config(format!(
                "unknown loss '{other}', expected one of: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}
