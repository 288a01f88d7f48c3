//! Training losses and evaluation metrics.
//!
//! Reductions average over every scalar (pixels x channels x batch) and are
//! accumulated in `f64` regardless of the tensor element type.

use serde::{Deserialize, Serialize};

use crate::colorspace::{clamp_to_srgb, linear_to_srgb};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{same_shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelMseConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl RelMseConfig {
    pub const BCR: Self = Self { lambda1: 0.5, lambda2: 0.01 };
    pub const GHARBI: Self = Self { lambda1: 1.0, lambda2: 1e-4 };
}

/// Linear to sRGB conversion used before PSNR.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SrgbRule {
    /// Piecewise gamma curve.
    Eq3,
    /// `min(1, max(0, l))`.
    Clamp,
}

impl SrgbRule {
    pub fn apply<T: Scalar>(self, l: T) -> T {
        match self {
            SrgbRule::Eq3 => linear_to_srgb(l),
            SrgbRule::Clamp => clamp_to_srgb(l),
        }
    }
}

/// Metric constants bundled per dataset convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricPreset {
    Bcr,
    Gharbi,
}

impl MetricPreset {
    pub fn relmse(self) -> RelMseConfig {
        match self {
            MetricPreset::Bcr => RelMseConfig::BCR,
            MetricPreset::Gharbi => RelMseConfig::GHARBI,
        }
    }

    pub fn srgb_rule(self) -> SrgbRule {
        match self {
            MetricPreset::Bcr => SrgbRule::Eq3,
            MetricPreset::Gharbi => SrgbRule::Clamp,
        }
    }
}

/// Mean of `|d| / (beta + |d|)` with `d = pred - target`, and its gradient
/// with respect to `pred` (zero where `d == 0`).
pub fn robust_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, cfg: LossConfig) -> Result<(f64, Tensor<T>)> {
    same_shape(pred, target, "robust_loss")?;
    let n = pred.data().len() as f64;
    let beta = cfg.beta;
    let loss = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let a = (p.as_f64() - t.as_f64()).abs();
            a / (beta + a)
        })
        .sum::<f64>()
        / n;
    let grad = pred.zip_map(target, |p, t| {
        let d = p.as_f64() - t.as_f64();
        if d == 0.0 {
            T::zero()
        } else {
            let a = d.abs();
            T::of_f64(d.signum() * beta / ((beta + a) * (beta + a)) / n)
        }
    })?;
    Ok((loss, grad))
}

/// Mean absolute error and its subgradient (zero at ties).
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    same_shape(pred, target, "l1_loss")?;
    let n = pred.data().len() as f64;
    let loss = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p.as_f64() - t.as_f64()).abs()).sum::<f64>() / n;
    let grad = pred.zip_map(target, |p, t| {
        let d = p.as_f64() - t.as_f64();
        if d == 0.0 {
            T::zero()
        } else {
            T::of_f64(d.signum() / n)
        }
    })?;
    Ok((loss, grad))
}

/// Mean of `lambda1 (pred - target)^2 / (target^2 + lambda2)` in scene-linear space.
pub fn relmse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, cfg: RelMseConfig) -> Result<f64> {
    same_shape(pred, target, "relmse")?;
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (p, t) = (p.as_f64(), t.as_f64());
            cfg.lambda1 * (p - t) * (p - t) / (t * t + cfg.lambda2)
        })
        .sum::<f64>()
        / n)
}

/// PSNR in dB with peak 1 after converting both images to sRGB.
/// Identical images give `f64::INFINITY`.
pub fn psnr_srgb<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, rule: SrgbRule) -> Result<f64> {
    same_shape(pred, target, "psnr_srgb")?;
    let n = pred.data().len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = rule.apply(p.as_f64()) - rule.apply(t.as_f64());
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
