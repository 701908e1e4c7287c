//! Minimal differentiable building blocks on top of `candle-core` tensors.

pub mod adam;
pub mod conv;
pub mod layers;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use conv::conv2d_nhwc;
pub use layers::{leaky_relu, log_softmax, sigmoid, softmax, BatchNorm, Conv, Linear};
pub use params::{NormMode, Param, ParamStore};
