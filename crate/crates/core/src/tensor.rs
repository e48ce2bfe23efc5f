//! Dense `(channel, row, col)` tensors of `f32`.
//!
//! Every feature map, pattern and image in the crate is a [`Tensor`]. There
//! is no batch dimension: one seed is visualized at a time. Reductions
//! accumulate in `f64`.

use std::fmt;

use crate::error::{Error, Result};

/// `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.channels, self.height, self.width)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

fn check_dims(channels: usize, height: usize, width: usize) -> Result<Shape> {
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "tensor dimensions must be >= 1, got ({channels},{height},{width})"
        )));
    }
    channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::invalid("tensor dimensions overflow"))?;
    Ok(Shape::new(channels, height, width))
}

impl Tensor {
    pub fn new_zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        let shape = check_dims(channels, height, width)?;
        Ok(Tensor {
            shape,
            data: vec![0.0; shape.len()],
        })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::new_zeros(shape.channels, shape.height, shape.width)
    }

    /// Wraps row-major `(channel, row, col)` data. Rejects non-finite values.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        let shape = check_dims(shape.channels, shape.height, shape.width)?;
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} elements for {shape}", shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        for c in 0..shape.channels {
            for r in 0..shape.height {
                for col in 0..shape.width {
                    let v = f(c, r, col);
                    t.data[(c * shape.height + r) * shape.width + col] = v;
                }
            }
        }
        Self::from_vec(shape, t.data)
    }

    /// Internal constructor for kernels whose output is finite by construction.
    pub(crate) fn from_raw(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.shape.height + r) * self.shape.width + col
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[self.offset(c, r, col)]
    }

    #[inline]
    pub(crate) fn set(&mut self, c: usize, r: usize, col: usize, v: f32) {
        let i = self.offset(c, r, col);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn scale(&self, alpha: f32) -> Tensor {
        debug_assert!(alpha.is_finite());
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn inner_product(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Affine map onto `[0, 1]`. A constant tensor maps to 0.5 everywhere.
    pub fn minmax_normalize(&self) -> Tensor {
        let (lo, hi) = self.min_max();
        let range = hi as f64 - lo as f64;
        let data = if range > 0.0 {
            self.data
                .iter()
                .map(|&v| (((v as f64 - lo as f64) / range) as f32).clamp(0.0, 1.0))
                .collect()
        } else {
            vec![0.5; self.data.len()]
        };
        Tensor {
            shape: self.shape,
            data,
        }
    }
}
