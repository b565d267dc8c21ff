//! Adaptive-scale convolution (ASC) and the ASCNet segmentation family.
//!
//! The crate is a small, dependency-light deep-learning engine with hand-written
//! backward passes. Its centre is [`conv`]: classic, dilated and adaptive-scale
//! 3x3 convolutions, where the adaptive variant samples its input at
//! `p0 + r(p0) * pn` with a learned, per-pixel, fractional rate `r` and bilinear
//! interpolation. [`models`] stacks those operators into the classic/dilated
//! baselines and ASCNet, [`training`] runs Adam over single-sample batches and
//! checks gradients by finite differences, and [`data`] produces a synthetic
//! multi-scale corpus together with metrics and image I/O.

pub mod adam;
pub mod container;
pub mod conv;
pub mod data;
pub mod error;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::{LabelMap, Scalar, Tensor};
