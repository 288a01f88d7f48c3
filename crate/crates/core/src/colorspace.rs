//! Scene-linear to display conversions and outlier handling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Threshold above which renders are treated as fireflies and clipped.
pub const DEFAULT_CLIP: f64 = 100.0;

const SRGB_KNEE: f64 = 0.0031308;
const DEPTH_EPS: f64 = 0.00001;

/// Piecewise sRGB transfer with saturation at 0 and 1. NaN propagates.
pub fn linear_to_srgb<T: Scalar>(l: T) -> T {
    if l.is_nan() {
        return l;
    }
    let v = l.as_f64();
    let s = if v <= 0.0 {
        0.0
    } else if v <= SRGB_KNEE {
        12.92 * v
    } else if v < 1.0 {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    } else {
        1.0
    };
    T::of_f64(s)
}

/// Plain clamp to `[0, 1]`. NaN propagates.
pub fn clamp_to_srgb<T: Scalar>(l: T) -> T {
    if l.is_nan() {
        return l;
    }
    l.max(T::zero()).min(T::one())
}

pub fn linear_to_srgb_tensor<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    img.map(linear_to_srgb)
}

pub fn clamp_to_srgb_tensor<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    img.map(clamp_to_srgb)
}

/// Caps every value at `threshold`; negative values are left alone.
pub fn clip_outliers<T: Scalar>(img: &Tensor<T>, threshold: T) -> Result<Tensor<T>> {
    if !(threshold > T::zero()) {
        return Err(Error::Config(format!("clip threshold must be > 0, got {threshold}")));
    }
    Ok(img.map(|v| if v > threshold { threshold } else { v }))
}

/// `1 / (depth + 1e-5)`, used only to make depth layers viewable.
pub fn depth_visualize<T: Scalar>(depth: &Tensor<T>) -> Result<Tensor<T>> {
    let eps = T::of_f64(DEPTH_EPS);
    depth.try_map(|d| {
        if d < T::zero() {
            return Err(Error::Data(format!("negative depth value {d}")));
        }
        Ok(T::one() / (d + eps))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use approx::assert_abs_diff_eq;

    #[test]
    fn srgb_arms() {
        assert_eq!(linear_to_srgb(-0.1f64), 0.0);
        assert_eq!(linear_to_srgb(1.5f64), 1.0);
        assert_eq!(linear_to_srgb(1.0f64), 1.0);
        assert_abs_diff_eq!(linear_to_srgb(0.002f64), 0.02584, epsilon = 1e-12);
        // 1.055 * 0.5^(1/2.4) - 0.055
        assert_abs_diff_eq!(linear_to_srgb(0.5f64), 0.735_356_983_052_449_3, epsilon = 1e-12);
        assert!(linear_to_srgb(f64::NAN).is_nan());
    }

    #[test]
    fn srgb_is_continuous_at_knees() {
        let below = linear_to_srgb(SRGB_KNEE);
        let above = linear_to_srgb(SRGB_KNEE + 1e-12);
        assert!((below - above).abs() < 1e-6, "{below} vs {above}");
        assert!((linear_to_srgb(1.0 - 1e-12) - 1.0f64).abs() < 1e-6);
        assert!(linear_to_srgb(1e-300f64) < 1e-6);
    }

    #[test]
    fn clamp_rule() {
        assert_eq!(clamp_to_srgb(-3.0f32), 0.0);
        assert_eq!(clamp_to_srgb(0.25f32), 0.25);
        assert_eq!(clamp_to_srgb(7.0f32), 1.0);
    }

    #[test]
    fn clipping() {
        let img = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![150.0f32, 99.9, -0.2]).unwrap();
        let out = clip_outliers(&img, 100.0).unwrap();
        assert_eq!(out.data(), &[100.0, 99.9, -0.2]);
        assert_eq!(clip_outliers(&out, 100.0).unwrap(), out);
        assert!(clip_outliers(&img, 0.0).is_err());
    }

    #[test]
    fn depth() {
        let d = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.0f64, 0.99999, 1e9]).unwrap();
        let v = depth_visualize(&d).unwrap();
        assert_abs_diff_eq!(v.data()[0], 1e5, epsilon = 1e-6);
        assert_abs_diff_eq!(v.data()[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.data()[2], 1e-9, epsilon = 1e-15);
        let neg = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![-1.0f64]).unwrap();
        assert!(matches!(depth_visualize(&neg), Err(Error::Data(_))));
    }
}
