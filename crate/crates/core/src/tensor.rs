//! Dense row-major tensors and the elementwise/reduction primitives used by the
//! rest of the crate.
//!
//! 4-D activations use NCHW layout and 4-D kernels OIHW. There is no
//! broadcasting; every operator that needs a backward pass has a hand-written
//! companion.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Element type of a [`Tensor`]. Training runs in `f32`, gradient checks in
/// `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Code used by the tensor container format.
    const DTYPE_CODE: u8;

    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE_CODE: u8 = 0;
}

impl Scalar for f64 {
    const DTYPE_CODE: u8 = 1;
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            shape.iter().all(|&d| d >= 1),
            "tensor dimensions must be positive, got {shape:?}"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// `(channels, height, width)` of an `[1, C, H, W]` activation.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [1, c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!(
                "expected [1, C, H, W], got {:?}",
                self.shape
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub(crate) fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(format!(
                "{what}: expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// Per-pixel class indices of a `[1, H, W]` label map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape(format!(
                "label map {height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        LabelMap {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.width + x]
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`]: passes `grad` where `x > 0`, zero elsewhere
/// (including `x == 0`).
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    grad.expect_shape(x.shape(), "relu gradient")?;
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Mean pixelwise softmax cross-entropy over an `[1, C, H, W]` logit map.
///
/// Returns the loss and its gradient `(softmax - onehot) / (H * W)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &LabelMap,
) -> Result<(T, Tensor<T>)> {
    let (classes, h, w) = logits.chw()?;
    if labels.height() != h || labels.width() != w {
        return Err(Error::shape(format!(
            "labels {}x{} vs logits {h}x{w}",
            labels.height(),
            labels.width()
        )));
    }
    let hw = h * w;
    let scale = T::one() / T::from_usize(hw).unwrap();
    let src = logits.data();
    let mut grad = vec![T::zero(); src.len()];
    let mut loss = T::zero();
    for pix in 0..hw {
        let label = labels.data()[pix];
        if label as usize >= classes {
            return Err(Error::LabelOutOfRange {
                y: pix / w,
                x: pix % w,
                label,
                classes,
            });
        }
        let max = (0..classes)
            .map(|c| src[c * hw + pix])
            .fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for c in 0..classes {
            let e = (src[c * hw + pix] - max).exp();
            grad[c * hw + pix] = e;
            denom = denom + e;
        }
        let label = label as usize;
        loss = loss + denom.ln() - (src[label * hw + pix] - max);
        for c in 0..classes {
            let p = grad[c * hw + pix] / denom;
            let target = if c == label { T::one() } else { T::zero() };
            grad[c * hw + pix] = (p - target) * scale;
        }
    }
    Ok((loss * scale, Tensor::from_vec(logits.shape(), grad)?))
}

/// Per-pixel argmax over the class axis of an `[1, C, H, W]` map. Ties go to
/// the lowest class index.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Result<LabelMap> {
    let (classes, h, w) = logits.chw()?;
    let hw = h * w;
    let src = logits.data();
    let data = (0..hw)
        .map(|pix| {
            let mut best = 0;
            for c in 1..classes {
                if src[c * hw + pix] > src[best * hw + pix] {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    LabelMap::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_and_backward() {
        let x = Tensor::from_vec(&[3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::full(&[3], 1.0);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
        let z = Tensor::<f32>::zeros(&[2, 2]);
        assert_eq!(relu(&z), z);
    }

    #[test]
    fn from_vec_rejects_bad_shapes() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0f32; 3]).is_err());
        assert!(Tensor::from_vec(&[0, 2], Vec::<f32>::new()).is_err());
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::<f64>::full(&[1, 2, 3, 3], 0.7);
        let labels = LabelMap::new(3, 3, vec![0, 1, 1, 0, 0, 1, 0, 1, 0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_give_tiny_loss() {
        let labels = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let mut data = vec![0.0f64; 8];
        for (pix, &l) in labels.data().iter().enumerate() {
            data[l as usize * 4 + pix] = 100.0;
        }
        let logits = Tensor::from_vec(&[1, 2, 2, 2], data).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn label_out_of_range_names_pixel() {
        let logits = Tensor::<f32>::zeros(&[1, 2, 2, 3]);
        let labels = LabelMap::new(2, 3, vec![0, 0, 0, 0, 2, 0]).unwrap();
        match softmax_cross_entropy(&logits, &labels) {
            Err(Error::LabelOutOfRange { y, x, label, .. }) => {
                assert_eq!((y, x, label), (1, 1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn argmax_picks_largest() {
        let logits = Tensor::from_vec(&[1, 2, 1, 3], vec![1.0f32, 0.0, 5.0, 0.5, 2.0, 5.0]).unwrap();
        assert_eq!(argmax_classes(&logits).unwrap().data(), &[0, 1, 0]);
    }
}
