//! Bilinear sampling at fractional positions and the per-image sampling plan
//! shared by every adaptive-scale layer.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{RateField, TAPS};

/// A fractional sampling location `(y, x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint<T = f64> {
    pub y: T,
    pub x: T,
}

impl<T: Scalar> SamplePoint<T> {
    pub fn new(y: T, x: T) -> Self {
        SamplePoint { y, x }
    }
}

/// Tent weight `max(0, 1 - |qx - px|) * max(0, 1 - |qy - py|)` of the integer
/// location `(qy, qx)` for the sample point `p`.
pub fn bilinear_kernel<T: Scalar>(qy: isize, qx: isize, p: SamplePoint<T>) -> T {
    let tent = |d: T| (T::one() - d.abs()).max(T::zero());
    let qy = T::of(qy as f64);
    let qx = T::of(qx as f64);
    tent(qx - p.x) * tent(qy - p.y)
}

/// Bilinearly interpolated value of channel `c` at `p`. `x` is `[C, H, W]` or
/// `[1, C, H, W]`; locations outside the map read as zero.
pub fn sample_bilinear<T: Scalar>(x: &Tensor<T>, p: SamplePoint<T>, c: usize) -> Result<T> {
    let (channels, h, w) = match x.shape() {
        &[c, h, w] | &[1, c, h, w] => (c, h, w),
        other => return Err(Error::shape(format!("expected [C, H, W], got {other:?}"))),
    };
    if c >= channels {
        return Err(Error::shape(format!(
            "channel {c} out of range for {channels} channels"
        )));
    }
    let plane = &x.data()[c * h * w..(c + 1) * h * w];
    let cell = Cell::locate(p);
    let mut acc = T::zero();
    for k in 0..4 {
        if let Some(idx) = cell.index(k, h, w) {
            acc = acc + cell.weight(k) * plane[idx];
        }
    }
    Ok(acc)
}

/// The unit cell containing a sample point: its top-left corner and the
/// fractional offsets inside it. Corner `k` is `(k / 2, k % 2)` relative to
/// the top-left.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell<T> {
    y0: isize,
    x0: isize,
    fy: T,
    fx: T,
}

impl<T: Scalar> Cell<T> {
    pub(crate) fn locate(p: SamplePoint<T>) -> Self {
        let fy0 = p.y.floor();
        let fx0 = p.x.floor();
        Cell {
            y0: fy0.to_isize().unwrap_or(isize::MIN / 2),
            x0: fx0.to_isize().unwrap_or(isize::MIN / 2),
            fy: p.y - fy0,
            fx: p.x - fx0,
        }
    }

    fn row_weight(&self, a: usize) -> T {
        if a == 0 {
            T::one() - self.fy
        } else {
            self.fy
        }
    }

    fn col_weight(&self, b: usize) -> T {
        if b == 0 {
            T::one() - self.fx
        } else {
            self.fx
        }
    }

    pub(crate) fn weight(&self, k: usize) -> T {
        self.row_weight(k / 2) * self.col_weight(k % 2)
    }

    /// Derivatives of corner `k`'s weight with respect to `(py, px)`, taken
    /// inside this cell (the right-hand derivative on a cell boundary).
    pub(crate) fn weight_grad(&self, k: usize) -> (T, T) {
        let sign = |s: usize| if s == 0 { -T::one() } else { T::one() };
        let (a, b) = (k / 2, k % 2);
        (
            sign(a) * self.col_weight(b),
            self.row_weight(a) * sign(b),
        )
    }

    pub(crate) fn index(&self, k: usize, h: usize, w: usize) -> Option<usize> {
        let y = self.y0 + (k / 2) as isize;
        let x = self.x0 + (k % 2) as isize;
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            None
        } else {
            Some(y as usize * w + x as usize)
        }
    }
}

/// Sentinel for an out-of-map neighbour.
const OUTSIDE: u32 = u32::MAX;

/// Precomputed bilinear neighbours, weights and rate derivatives for every
/// output pixel and kernel tap of one rate field.
///
/// Entry `tap * H * W + pixel` describes sample point
/// `p0 + r(p0) * pn` with `pn = (tap / 3 - 1, tap % 3 - 1)`.
#[derive(Clone, Debug)]
pub struct SamplingPlan<T = f32> {
    height: usize,
    width: usize,
    pub(crate) neighbors: Vec<[u32; 4]>,
    pub(crate) weights: Vec<[T; 4]>,
    pub(crate) rate_grads: Vec<[T; 4]>,
}

impl<T: Scalar> SamplingPlan<T> {
    pub fn new(rates: &RateField<T>) -> Self {
        let (h, w) = rates.dims();
        let hw = h * w;
        let mut neighbors = Vec::with_capacity(TAPS * hw);
        let mut weights = Vec::with_capacity(TAPS * hw);
        let mut rate_grads = Vec::with_capacity(TAPS * hw);
        for tap in 0..TAPS {
            let dy = (tap / 3) as isize - 1;
            let dx = (tap % 3) as isize - 1;
            let (ty, tx) = (T::of(dy as f64), T::of(dx as f64));
            for pix in 0..hw {
                let r = rates.values().data()[pix];
                let p = SamplePoint::new(
                    T::of((pix / w) as f64) + r * ty,
                    T::of((pix % w) as f64) + r * tx,
                );
                let cell = Cell::locate(p);
                let mut idx = [OUTSIDE; 4];
                let mut wt = [T::zero(); 4];
                let mut dr = [T::zero(); 4];
                for k in 0..4 {
                    if let Some(i) = cell.index(k, h, w) {
                        idx[k] = i as u32;
                    }
                    wt[k] = cell.weight(k);
                    let (gy, gx) = cell.weight_grad(k);
                    dr[k] = gy * ty + gx * tx;
                }
                neighbors.push(idx);
                weights.push(wt);
                rate_grads.push(dr);
            }
        }
        SamplingPlan {
            height: h,
            width: w,
            neighbors,
            weights,
            rate_grads,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Interpolated value of `plane` for entry `e`.
    #[inline]
    pub(crate) fn gather(&self, plane: &[T], e: usize) -> T {
        let idx = &self.neighbors[e];
        let wt = &self.weights[e];
        let mut acc = T::zero();
        for k in 0..4 {
            let v = if idx[k] == OUTSIDE {
                T::zero()
            } else {
                plane[idx[k] as usize]
            };
            acc = acc + wt[k] * v;
        }
        acc
    }

    /// Derivative of the interpolated value of `plane` for entry `e` with
    /// respect to the rate.
    #[inline]
    pub(crate) fn gather_rate_grad(&self, plane: &[T], e: usize) -> T {
        let idx = &self.neighbors[e];
        let dr = &self.rate_grads[e];
        let mut acc = T::zero();
        for k in 0..4 {
            if idx[k] != OUTSIDE {
                acc = acc + dr[k] * plane[idx[k] as usize];
            }
        }
        acc
    }

    /// Adds `g` times the interpolation weights of entry `e` into `plane`.
    #[inline]
    pub(crate) fn scatter(&self, plane: &mut [T], e: usize, g: T) {
        let idx = &self.neighbors[e];
        let wt = &self.weights[e];
        for k in 0..4 {
            if idx[k] != OUTSIDE {
                let slot = &mut plane[idx[k] as usize];
                *slot = *slot + wt[k] * g;
            }
        }
    }
}
