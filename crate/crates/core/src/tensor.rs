//! Dense row-major tensors and the two image utilities every stage leans on.

use crate::error::{Error, Result};

/// Dense row-major array of 64-bit reals with an explicit shape.
///
/// Every dimension is at least 1, so `data.len() == shape.iter().product()`
/// and no tensor is ever empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::shape("tensor shape must have at least one dimension"));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Builds an `[h, w]` tensor from a closure over `(row, col)`.
    pub fn from_fn2(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                data.push(f(r, c));
            }
        }
        Self::new(vec![h, w], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// `(H, W)` for a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [h, w] => Ok((*h, *w)),
            s => Err(Error::shape(format!("expected [H, W], got {s:?}"))),
        }
    }

    /// `(C, H, W)` for a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            s => Err(Error::shape(format!("expected [C, H, W], got {s:?}"))),
        }
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn at3(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.shape[1] + r) * self.shape[2] + c]
    }

    /// Channel `ch` of a `[C, H, W]` tensor as a flat slice.
    pub fn channel(&self, ch: usize) -> &[f64] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[ch * plane..(ch + 1) * plane]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    /// Values rounded through 32-bit storage precision.
    pub fn to_storage_precision(&self) -> Self {
        self.map(|x| x as f32 as f64)
    }
}

/// Bilinear resize with the align-corners-false convention (pixel centres at
/// half-integer positions, sample coordinates clamped to the border).
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = t.dims2()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("output dimensions must be positive"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = axis(out_h, h);
    let cols = axis(out_w, w);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = t.at2(r0, c0) * (1.0 - fc) + t.at2(r0, c1) * fc;
            let bottom = t.at2(r1, c0) * (1.0 - fc) + t.at2(r1, c1) * fc;
            data.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Tensor::new(vec![out_h, out_w], data)
}

/// Affine map onto `[0, 1]`; a constant input maps to all zeros.
pub fn normalize_minmax(t: &Tensor) -> Tensor {
    let lo = t.min();
    let hi = t.max();
    let range = hi - lo;
    if range <= 0.0 || !range.is_finite() {
        return t.map(|_| 0.0);
    }
    t.map(|x| ((x - lo) / range).clamp(0.0, 1.0))
}
