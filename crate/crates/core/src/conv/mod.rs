//! Classic, dilated and adaptive-scale 3x3 convolutions with hand-written
//! backward passes.
//!
//! All three operators run stride 1 and preserve spatial dimensions. Samples
//! that fall outside the input read as zero, which for the classic and dilated
//! kernels is zero padding of 1 and `r` respectively.
//!
//! The adaptive-scale convolution samples tap `pn` of output pixel `p0` at
//! `p0 + r(p0) * pn`, where `r` is a non-negative per-pixel rate shared by all
//! input and output channels, and reads fractional positions with bilinear
//! interpolation. Integer rates reproduce the dilated kernel exactly and
//! `r == 1` the classic one.
//!
//! The rate gradient is the derivative of the bilinear weights of the unit cell
//! `[floor(p), floor(p) + 1)` that contains the sample. On a cell boundary this
//! is the one-sided derivative from inside the cell, so integer sample
//! positions still receive a rate gradient.

mod bilinear;
mod ops;
pub mod oracle;

pub use bilinear::{bilinear_kernel, sample_bilinear, SamplePoint, SamplingPlan};
pub use ops::{
    asc_conv_backward, asc_conv_forward, conv_backward, conv_classic_backward,
    conv_classic_forward, conv_dilated_backward, conv_dilated_forward, conv_forward,
};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

/// Number of taps in a 3x3 kernel.
pub const TAPS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Classic,
    Dilated(usize),
    Adaptive,
}

/// One 3x3 convolution: OIHW weights, per-output-channel bias and its
/// sampling rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub kind: LayerKind,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, kind: LayerKind) -> Result<Self> {
        let out_c = match weight.shape() {
            &[o, _, 3, 3] => o,
            other => {
                return Err(Error::shape(format!(
                    "kernel must be [outC, inC, 3, 3], got {other:?}"
                )))
            }
        };
        bias.expect_shape(&[out_c], "bias")?;
        if kind == LayerKind::Dilated(0) {
            return Err(Error::Config("dilation rate must be >= 1".into()));
        }
        Ok(ConvLayer { weight, bias, kind })
    }

    pub fn zeros(in_c: usize, out_c: usize, kind: LayerKind) -> Self {
        ConvLayer::new(
            Tensor::zeros(&[out_c, in_c, 3, 3]),
            Tensor::zeros(&[out_c]),
            kind,
        )
        .expect("valid layer shapes")
    }

    /// He (fan-in) normal weights, zero bias.
    pub fn he_normal(in_c: usize, out_c: usize, kind: LayerKind, rng: &mut RngState) -> Self {
        let std = (2.0 / (in_c * TAPS) as f64).sqrt();
        let mut layer = Self::zeros(in_c, out_c, kind);
        for v in layer.weight.data_mut() {
            *v = T::of(rng.normal() * std);
        }
        layer
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            kind: self.kind,
        }
    }
}

/// Per-pixel dilation rates, shape `[1, 1, H, W]`, all values `>= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateField<T = f32> {
    values: Tensor<T>,
}

impl<T: Scalar> RateField<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        match values.shape() {
            &[1, 1, _, _] => {}
            other => {
                return Err(Error::shape(format!(
                    "rate field must be [1, 1, H, W], got {other:?}"
                )))
            }
        }
        if let Some(bad) = values.data().iter().find(|v| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Config(format!(
                "rates must be finite and non-negative, found {bad}"
            )));
        }
        Ok(RateField { values })
    }

    pub fn constant(height: usize, width: usize, rate: T) -> Self {
        RateField::new(Tensor::full(&[1, 1, height, width], rate)).expect("valid constant field")
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[2], self.values.shape()[3])
    }
}

/// Gradients of one convolution. `grad_rates` is present for adaptive layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub grad_x: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    pub grad_rates: Option<Tensor<T>>,
}
