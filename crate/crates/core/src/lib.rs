//! Super-resolution of hybrid Monte Carlo renders.
//!
//! The network takes a low-resolution high-spp render and a high-resolution
//! low-spp render with auxiliary layers, and predicts the high-resolution
//! high-spp image. Everything runs on the CPU and is generic over `f32` and
//! `f64`; training uses `f32`, gradient checks use `f64`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod colorspace;
pub mod compositor;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod network;
pub mod objective;
pub mod pixel_ops;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{ForwardCache, NetworkConfig, NetworkGrads, NetworkParams};
pub use scalar::Scalar;
pub use tensor::{ConvGrads, ConvParams, Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type NetworkParams32 = NetworkParams<f32>;
pub type NetworkParams64 = NetworkParams<f64>;
pub type RenderLayerSet32 = compositor::RenderLayerSet<f32>;
