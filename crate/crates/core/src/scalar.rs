//! Floating-point element type shared by every kernel in the crate.
//!
//! Production runs use `f32`; the gradient checker instantiates the same
//! code with `f64` so finite differences stay well above rounding noise.

use num_traits::{Float, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar: Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static {
    /// Bytes per element in the on-disk little-endian encoding.
    const BYTES: usize;

    fn of_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            const BYTES: usize = std::mem::size_of::<$t>();

            #[inline]
            fn of_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    )*};
}

impl_scalar!(f32, f64);
