//! Forward and backward passes, expressed as gather -> GEMM -> scatter.
//!
//! The gather step builds a `[inC * 9, H * W]` column matrix whose row
//! `ic * 9 + tap` holds channel `ic` sampled at every output pixel's tap
//! position. All three operators share the GEMM and differ only in how the
//! columns are gathered and scattered back. Every accumulation runs in a fixed
//! sequential order, so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{ConvGrads, ConvLayer, LayerKind, RateField, SamplingPlan, TAPS};

#[derive(Clone, Copy)]
enum Sampler<'a, T> {
    Grid(usize),
    Planned(&'a SamplingPlan<T>),
}

pub fn conv_classic_forward<T: Scalar>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    expect_kind(layer, |k| k == LayerKind::Classic, "classic")?;
    forward_impl(x, layer, Sampler::Grid(1))
}

pub fn conv_dilated_forward<T: Scalar>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let LayerKind::Dilated(r) = layer.kind else {
        return Err(kind_error("dilated", layer.kind));
    };
    forward_impl(x, layer, Sampler::Grid(r))
}

pub fn asc_conv_forward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    rates: &RateField<T>,
) -> Result<Tensor<T>> {
    expect_kind(layer, |k| k == LayerKind::Adaptive, "adaptive")?;
    let plan = SamplingPlan::new(rates);
    forward_impl(x, layer, Sampler::Planned(&plan))
}

pub fn conv_classic_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_y: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    expect_kind(layer, |k| k == LayerKind::Classic, "classic")?;
    backward_impl(x, layer, Sampler::Grid(1), grad_y)
}

pub fn conv_dilated_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_y: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let LayerKind::Dilated(r) = layer.kind else {
        return Err(kind_error("dilated", layer.kind));
    };
    backward_impl(x, layer, Sampler::Grid(r), grad_y)
}

/// Gradients of an adaptive-scale convolution with respect to its input,
/// weights, bias and rate field. `grad_rates` is always present.
pub fn asc_conv_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    rates: &RateField<T>,
    grad_y: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    expect_kind(layer, |k| k == LayerKind::Adaptive, "adaptive")?;
    let plan = SamplingPlan::new(rates);
    backward_impl(x, layer, Sampler::Planned(&plan), grad_y)
}

/// Forward pass of any layer kind. Adaptive layers need the plan built from
/// the shared rate field.
pub fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    plan: Option<&SamplingPlan<T>>,
) -> Result<Tensor<T>> {
    forward_impl(x, layer, sampler_for(layer, plan)?)
}

pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    plan: Option<&SamplingPlan<T>>,
    grad_y: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    backward_impl(x, layer, sampler_for(layer, plan)?, grad_y)
}

fn sampler_for<'a, T: Scalar>(
    layer: &ConvLayer<T>,
    plan: Option<&'a SamplingPlan<T>>,
) -> Result<Sampler<'a, T>> {
    match (layer.kind, plan) {
        (LayerKind::Classic, _) => Ok(Sampler::Grid(1)),
        (LayerKind::Dilated(r), _) => Ok(Sampler::Grid(r)),
        (LayerKind::Adaptive, Some(plan)) => Ok(Sampler::Planned(plan)),
        (LayerKind::Adaptive, None) => Err(Error::Config(
            "adaptive layer needs a rate field".into(),
        )),
    }
}

fn expect_kind<T>(
    layer: &ConvLayer<T>,
    ok: impl Fn(LayerKind) -> bool,
    want: &str,
) -> Result<()> {
    if ok(layer.kind) {
        Ok(())
    } else {
        Err(kind_error(want, layer.kind))
    }
}

fn kind_error(want: &str, got: LayerKind) -> Error {
    Error::Config(format!("expected a {want} layer, got {got:?}"))
}

fn check_input<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    sampler: Sampler<'_, T>,
) -> Result<(usize, usize, usize)> {
    let (c, h, w) = x.chw()?;
    if c != layer.in_channels() {
        return Err(Error::shape(format!(
            "input has {c} channels, kernel expects {}",
            layer.in_channels()
        )));
    }
    if let Sampler::Planned(plan) = sampler {
        if plan.dims() != (h, w) {
            return Err(Error::shape(format!(
                "rate field is {:?}, input is {h}x{w}",
                plan.dims()
            )));
        }
    }
    Ok((c, h, w))
}

fn gather<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, sampler: Sampler<'_, T>) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * TAPS * hw];
    for ic in 0..c {
        let plane = &x[ic * hw..(ic + 1) * hw];
        for tap in 0..TAPS {
            let row = &mut cols[(ic * TAPS + tap) * hw..(ic * TAPS + tap + 1) * hw];
            match sampler {
                Sampler::Grid(r) => {
                    let dy = ((tap / 3) as isize - 1) * r as isize;
                    let dx = ((tap % 3) as isize - 1) * r as isize;
                    for_each_valid(h, w, dy, dx, |dst, src| row[dst] = plane[src]);
                }
                Sampler::Planned(plan) => {
                    for (pix, out) in row.iter_mut().enumerate() {
                        *out = plan.gather(plane, tap * hw + pix);
                    }
                }
            }
        }
    }
    cols
}

/// Calls `f(output_index, input_index)` for every output pixel whose shifted
/// source `(y + dy, x + dx)` lies inside the map.
#[inline]
fn for_each_valid(h: usize, w: usize, dy: isize, dx: isize, mut f: impl FnMut(usize, usize)) {
    let x_lo = (-dx).max(0) as usize;
    let x_hi = (w as isize - dx).clamp(0, w as isize) as usize;
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let sy = sy as usize;
        for x in x_lo..x_hi {
            f(y * w + x, sy * w + (x as isize + dx) as usize);
        }
    }
}

fn forward_impl<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    sampler: Sampler<'_, T>,
) -> Result<Tensor<T>> {
    let (c, h, w) = check_input(x, layer, sampler)?;
    let hw = h * w;
    let k = c * TAPS;
    let out_c = layer.out_channels();
    let cols = gather(x.data(), c, h, w, sampler);
    let weight = layer.weight.data();
    let mut out = vec![T::zero(); out_c * hw];
    for oc in 0..out_c {
        let y = &mut out[oc * hw..(oc + 1) * hw];
        y.fill(layer.bias.data()[oc]);
        for row in 0..k {
            let a = weight[oc * k + row];
            let col = &cols[row * hw..(row + 1) * hw];
            for (yv, &cv) in y.iter_mut().zip(col) {
                *yv = *yv + a * cv;
            }
        }
    }
    Tensor::from_vec(&[1, out_c, h, w], out)
}

fn backward_impl<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    sampler: Sampler<'_, T>,
    grad_y: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (c, h, w) = check_input(x, layer, sampler)?;
    let out_c = layer.out_channels();
    grad_y.expect_shape(&[1, out_c, h, w], "output gradient")?;
    let hw = h * w;
    let k = c * TAPS;
    let cols = gather(x.data(), c, h, w, sampler);
    let gy = grad_y.data();
    let weight = layer.weight.data();

    let grad_bias: Vec<T> = (0..out_c)
        .map(|oc| gy[oc * hw..(oc + 1) * hw].iter().fold(T::zero(), |a, &g| a + g))
        .collect();

    let mut grad_weight = vec![T::zero(); out_c * k];
    for oc in 0..out_c {
        let g = &gy[oc * hw..(oc + 1) * hw];
        for row in 0..k {
            let col = &cols[row * hw..(row + 1) * hw];
            grad_weight[oc * k + row] = g
                .iter()
                .zip(col)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
    }

    let mut grad_cols = vec![T::zero(); k * hw];
    for row in 0..k {
        let dst = &mut grad_cols[row * hw..(row + 1) * hw];
        for oc in 0..out_c {
            let a = weight[oc * k + row];
            for (d, &g) in dst.iter_mut().zip(&gy[oc * hw..(oc + 1) * hw]) {
                *d = *d + a * g;
            }
        }
    }

    let mut grad_x = vec![T::zero(); c * hw];
    let mut grad_rates = match sampler {
        Sampler::Planned(_) => Some(vec![T::zero(); hw]),
        Sampler::Grid(_) => None,
    };
    let xd = x.data();
    for ic in 0..c {
        let plane = &xd[ic * hw..(ic + 1) * hw];
        let gx = &mut grad_x[ic * hw..(ic + 1) * hw];
        for tap in 0..TAPS {
            let gc = &grad_cols[(ic * TAPS + tap) * hw..(ic * TAPS + tap + 1) * hw];
            match sampler {
                Sampler::Grid(r) => {
                    let dy = ((tap / 3) as isize - 1) * r as isize;
                    let dx = ((tap % 3) as isize - 1) * r as isize;
                    for_each_valid(h, w, dy, dx, |dst, src| gx[src] = gx[src] + gc[dst]);
                }
                Sampler::Planned(plan) => {
                    let gr = grad_rates.as_mut().expect("planned sampler has rate grads");
                    for pix in 0..hw {
                        let e = tap * hw + pix;
                        plan.scatter(gx, e, gc[pix]);
                        gr[pix] = gr[pix] + gc[pix] * plan.gather_rate_grad(plane, e);
                    }
                }
            }
        }
    }

    Ok(ConvGrads {
        grad_x: Tensor::from_vec(&[1, c, h, w], grad_x)?,
        grad_weight: Tensor::from_vec(layer.weight.shape(), grad_weight)?,
        grad_bias: Tensor::from_vec(&[out_c], grad_bias)?,
        grad_rates: grad_rates
            .map(|g| Tensor::from_vec(&[1, 1, h, w], g))
            .transpose()?,
    })
}
