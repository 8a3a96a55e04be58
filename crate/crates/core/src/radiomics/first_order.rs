use crate::error::{Error, Result};
use crate::math::percentile_sorted;
use crate::tensor::Tensor;

use super::quantize::{level_of, roi_of};

pub const FIRST_ORDER_NAMES: [&str; 18] = [
    "Energy",
    "Entropy",
    "Minimum",
    "10Percentile",
    "90Percentile",
    "Maximum",
    "Mean",
    "Median",
    "InterquartileRange",
    "Range",
    "MeanAbsoluteDeviation",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
    "StandardDeviation",
    "Skewness",
    "Kurtosis",
    "Variance",
    "Uniformity",
];

/// Intensity statistics of the ROI, in [`FIRST_ORDER_NAMES`] order.
/// Entropy (base 2) and uniformity use the `n_levels`-bin histogram; moments
/// use the population convention; skewness and kurtosis are 0 at zero
/// variance.
pub fn first_order(image: &Tensor, mask: &Tensor, n_levels: usize) -> Result<Vec<f64>> {
    if mask.shape() != image.shape() {
        return Err(Error::shape("mask and image differ in shape"));
    }
    let roi = roi_of(mask);
    let mut x: Vec<f64> = image.data().iter().zip(&roi).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if x.is_empty() {
        return Err(Error::EmptyMask);
    }
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let (lo, hi) = (x[0], x[x.len() - 1]);

    let mut hist = vec![0usize; n_levels + 1];
    for &v in &x {
        hist[level_of(v, lo, hi - lo, n_levels)] += 1;
    }
    let probs: Vec<f64> = hist.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n).collect();
    let entropy = -probs.iter().map(|p| p * p.log2()).sum::<f64>();
    let uniformity = probs.iter().map(|p| p * p).sum::<f64>();

    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let (skew, kurt) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2)) } else { (0.0, 0.0) };

    let p10 = percentile_sorted(&x, 10.0);
    let p90 = percentile_sorted(&x, 90.0);
    let robust: Vec<f64> = x.iter().copied().filter(|&v| v >= p10 && v <= p90).collect();
    // interpolated percentiles can leave no value inside [p10, p90]
    let rmad = if robust.is_empty() {
        0.0
    } else {
        let rmean = robust.iter().sum::<f64>() / robust.len() as f64;
        robust.iter().map(|v| (v - rmean).abs()).sum::<f64>() / robust.len() as f64
    };
    let energy = x.iter().map(|v| v * v).sum::<f64>();

    Ok(vec![
        energy,
        entropy,
        lo,
        p10,
        p90,
        hi,
        mean,
        percentile_sorted(&x, 50.0),
        percentile_sorted(&x, 75.0) - percentile_sorted(&x, 25.0),
        hi - lo,
        x.iter().map(|v| (v - mean).abs()).sum::<f64>() / n,
        rmad,
        (energy / n).sqrt(),
        m2.sqrt(),
        skew,
        kurt,
        m2,
        uniformity,
    ])
}
