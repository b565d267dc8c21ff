//! Literal, slow reference for the adaptive-scale convolution.
//!
//! Every sample sums the tent kernel against *all* integer locations of the
//! input map instead of the four neighbours. Meant for tiny tensors in tests.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{bilinear_kernel, ConvLayer, RateField, SamplePoint};

pub fn oracle_asc_forward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    rates: &RateField<T>,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if c != layer.in_channels() {
        return Err(Error::shape(format!(
            "input has {c} channels, kernel expects {}",
            layer.in_channels()
        )));
    }
    if rates.dims() != (h, w) {
        return Err(Error::shape(format!(
            "rate field is {:?}, input is {h}x{w}",
            rates.dims()
        )));
    }
    let out_c = layer.out_channels();
    let xd = x.data();
    let wd = layer.weight.data();
    let mut out = vec![T::zero(); out_c * h * w];
    for oc in 0..out_c {
        for y0 in 0..h {
            for x0 in 0..w {
                let r = rates.values().data()[y0 * w + x0];
                let mut acc = layer.bias.data()[oc];
                for ic in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let p = SamplePoint::new(
                                T::of(y0 as f64) + r * T::of(ky as f64 - 1.0),
                                T::of(x0 as f64) + r * T::of(kx as f64 - 1.0),
                            );
                            let mut sample = T::zero();
                            for qy in 0..h {
                                for qx in 0..w {
                                    let f = bilinear_kernel(qy as isize, qx as isize, p);
                                    sample = sample + f * xd[(ic * h + qy) * w + qx];
                                }
                            }
                            acc = acc + wd[((oc * c + ic) * 3 + ky) * 3 + kx] * sample;
                        }
                    }
                }
                out[(oc * h + y0) * w + x0] = acc;
            }
        }
    }
    Tensor::from_vec(&[1, out_c, h, w], out)
}
