//! Dense row-major `f64` tensors.
//!
//! Image-like data uses an `H×W×C` layout (channels fastest). Parameters use
//! whatever shape their layer needs; a scalar is a tensor of shape `[1]`.

use crate::error::{GimmError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(GimmError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds an `H×W×C` tensor from a per-pixel generator.
    pub fn from_fn_hwc(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    data.push(f(y, x, k));
                }
            }
        }
        Self {
            shape: vec![h, w, c],
            data,
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(h, w, c)` of a rank-3 tensor.
    ///
    /// Panics on any other rank; callers validate rank at API boundaries.
    pub fn hwc(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected an HxWxC tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn is_hwc(&self) -> bool {
        self.shape.len() == 3
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let (w, ch) = (self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c] = v;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(GimmError::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(GimmError::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape, other.shape
            )))
        }
    }

    /// Copies a `size_h×size_w` window starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, size_h: usize, size_w: usize) -> Result<Self> {
        let (h, w, c) = self.hwc();
        if y0 + size_h > h || x0 + size_w > w {
            return Err(GimmError::ShapeMismatch(format!(
                "crop {size_h}x{size_w}@({y0},{x0}) exceeds {h}x{w}"
            )));
        }
        let mut data = Vec::with_capacity(size_h * size_w * c);
        for y in y0..y0 + size_h {
            let row = (y * w + x0) * c;
            data.extend_from_slice(&self.data[row..row + size_w * c]);
        }
        Ok(Self {
            shape: vec![size_h, size_w, c],
            data,
        })
    }

    /// Concatenates rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let (h, w, _) = parts[0].hwc();
        let mut total = 0;
        for p in parts {
            let (ph, pw, pc) = p.hwc();
            if (ph, pw) != (h, w) {
                return Err(GimmError::ShapeMismatch(format!(
                    "concat: {ph}x{pw} vs {h}x{w}"
                )));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(h * w * total);
        for px in 0..h * w {
            for p in parts {
                let pc = p.shape[2];
                data.extend_from_slice(&p.data[px * pc..(px + 1) * pc]);
            }
        }
        Ok(Self {
            shape: vec![h, w, total],
            data,
        })
    }

    /// Channels `[start, start + len)` of a rank-3 tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Self {
        let (h, w, c) = self.hwc();
        assert!(start + len <= c);
        let mut data = Vec::with_capacity(h * w * len);
        for px in 0..h * w {
            data.extend_from_slice(&self.data[px * c + start..px * c + start + len]);
        }
        Self {
            shape: vec![h, w, len],
            data,
        }
    }
}
