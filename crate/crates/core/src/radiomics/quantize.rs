use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gray levels `1..=n_levels` on the region of interest, 0 elsewhere.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedImage {
    pub h: usize,
    pub w: usize,
    pub n_levels: usize,
    pub levels: Vec<usize>,
}

impl QuantizedImage {
    /// Wraps precomputed levels; 0 marks pixels outside the ROI.
    pub fn from_levels(h: usize, w: usize, n_levels: usize, levels: Vec<usize>) -> Result<Self> {
        if levels.len() != h * w {
            return Err(Error::shape(format!("{} levels for a {h}x{w} grid", levels.len())));
        }
        if n_levels < 2 {
            return Err(Error::invalid("at least two gray levels are required"));
        }
        if levels.iter().any(|&l| l > n_levels) {
            return Err(Error::invalid("gray level above n_levels"));
        }
        if levels.iter().all(|&l| l == 0) {
            return Err(Error::EmptyMask);
        }
        Ok(Self { h, w, n_levels, levels })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> usize {
        self.levels[r * self.w + c]
    }

    /// Level at a signed position, 0 when outside the grid or the ROI.
    #[inline]
    pub fn at_signed(&self, r: isize, c: isize) -> usize {
        if r < 0 || c < 0 || r >= self.h as isize || c >= self.w as isize {
            0
        } else {
            self.levels[r as usize * self.w + c as usize]
        }
    }

    pub fn roi_size(&self) -> usize {
        self.levels.iter().filter(|&&l| l > 0).count()
    }
}

/// ROI membership of a mask (values ≥ 0.5).
pub fn roi_of(mask: &Tensor) -> Vec<bool> {
    mask.data().iter().map(|&v| v >= 0.5).collect()
}

/// Equal-width binning of ROI intensities over their `[min, max]` range:
/// `floor((x - min) / (max - min) · Ng) + 1`, clamped to `Ng`. A constant
/// ROI maps to level 1.
pub fn quantize(image: &Tensor, mask: &Tensor, n_levels: usize) -> Result<QuantizedImage> {
    let (h, w) = image.dims2()?;
    if mask.shape() != image.shape() {
        return Err(Error::shape("mask and image differ in shape"));
    }
    if n_levels < 2 {
        return Err(Error::invalid("at least two gray levels are required"));
    }
    let roi = roi_of(mask);
    let vals: Vec<f64> = image.data().iter().zip(&roi).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if vals.is_empty() {
        return Err(Error::EmptyMask);
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let levels = image
        .data()
        .iter()
        .zip(&roi)
        .map(|(&v, &m)| {
            if !m {
                0
            } else {
                level_of(v, lo, range, n_levels)
            }
        })
        .collect();
    Ok(QuantizedImage { h, w, n_levels, levels })
}

#[inline]
pub(crate) fn level_of(v: f64, lo: f64, range: f64, n_levels: usize) -> usize {
    if range <= 0.0 {
        return 1;
    }
    let b = ((v - lo) / range * n_levels as f64).floor() as isize + 1;
    b.clamp(1, n_levels as isize) as usize
}
