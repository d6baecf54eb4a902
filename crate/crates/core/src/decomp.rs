//! Seasonal-trend decomposition along the time axis of `[B, T, N]` tensors.
//!
//! Two smoothers are provided. The exponential moving average (EMA) is the
//! decomposition used inside the loss; the simple moving average (SMA) is the
//! one the DLinear backbone applies to its input window.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

const TIME_AXIS: usize = 1;

/// Closed-form EMA divisors below this are treated as underflowed.
pub const MIN_CLOSED_FORM_DIVISOR: f64 = 1e-300;

/// EMA smoothing factor, clamped into `[MIN, MAX]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SmoothingFactor(f64);

impl SmoothingFactor {
    pub const MIN: f64 = 0.001;
    pub const MAX: f64 = 0.999;

    /// Clamps `alpha` into `[0.001, 0.999]`. Non-finite input is rejected.
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::Config(format!("smoothing factor must be finite, got {alpha}")));
        }
        Ok(Self(alpha.clamp(Self::MIN, Self::MAX)))
    }

    /// Whether [`new`](Self::new) would move `alpha`.
    pub fn needs_clamp(alpha: f64) -> bool {
        alpha.is_finite() && !(Self::MIN..=Self::MAX).contains(&alpha)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SmoothingFactor {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<SmoothingFactor> for f64 {
    fn from(a: SmoothingFactor) -> f64 {
        a.0
    }
}

/// Seasonal and trend parts of a `[B, T, N]` tensor; `seasonal = x − trend`.
#[derive(Clone, Debug)]
pub struct DecompPair {
    pub seasonal: Tensor,
    pub trend: Tensor,
}

fn check_series(x: &Tensor) -> Result<usize> {
    match x.shape() {
        [_, t, _] if *t == 0 => dim_err("decomposition needs at least one time step"),
        [_, t, _] => Ok(*t),
        s => dim_err(format!("decomposition expects [B, T, N], got {s:?}")),
    }
}

fn pair_from_trend(x: &Tensor, trend: Tensor) -> Result<DecompPair> {
    let seasonal = x.sub(&trend)?;
    Ok(DecompPair { seasonal, trend })
}

/// EMA decomposition: trend e₁ = x₁, e_t = α·x_t + (1−α)·e_{t−1} along time,
/// evaluated by a differentiable recursive scan.
pub fn ema_decompose(x: &Tensor, alpha: SmoothingFactor) -> Result<DecompPair> {
    check_series(x)?;
    let trend = x.ema_scan(TIME_AXIS, alpha.get())?;
    pair_from_trend(x, trend)
}

/// Smallest divisor the closed form would use for a horizon of `len` steps.
pub fn closed_form_min_divisor(len: usize, alpha: SmoothingFactor) -> f64 {
    (1.0 - alpha.get()).powi(len.saturating_sub(1) as i32)
}

/// EMA decomposition through weighted cumulative sums:
///
/// W = [(1−α)^{T−1}, …, 1], D = W, W[1..] *= α,
/// trend = cumsum(x · W) / D.
///
/// When the smallest divisor underflows below [`MIN_CLOSED_FORM_DIVISOR`]
/// the result comes from [`ema_decompose`] instead.
pub fn ema_decompose_closed_form(x: &Tensor, alpha: SmoothingFactor) -> Result<DecompPair> {
    let len = check_series(x)?;
    if closed_form_min_divisor(len, alpha) < MIN_CLOSED_FORM_DIVISOR {
        return ema_decompose(x, alpha);
    }
    let decay = 1.0 - alpha.get();
    let divisor: Vec<f64> = (0..len).map(|i| decay.powi((len - 1 - i) as i32)).collect();
    let mut weights = divisor.clone();
    weights[1..].iter_mut().for_each(|w| *w *= alpha.get());
    let weights = Tensor::new(vec![1, len, 1], weights)?;
    let divisor = Tensor::new(vec![1, len, 1], divisor)?;
    let trend = x.mul(&weights)?.cumsum(TIME_AXIS)?.div(&divisor)?;
    pair_from_trend(x, trend)
}

/// Moving-average decomposition with an odd window and replicate padding of
/// `(kernel − 1) / 2` at each end.
pub fn sma_decompose(x: &Tensor, kernel: usize) -> Result<DecompPair> {
    check_series(x)?;
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Contract(format!(
            "moving-average kernel must be an odd positive integer, got {kernel}"
        )));
    }
    let trend = x.moving_average(TIME_AXIS, kernel)?;
    pair_from_trend(x, trend)
}
