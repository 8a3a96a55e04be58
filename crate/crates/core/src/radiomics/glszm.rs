use crate::cam_prompt::{label_components, Connectivity};

use super::glrlm::size_features;
use super::quantize::QuantizedImage;

pub const GLSZM_NAMES: [&str; 16] = [
    "SmallAreaEmphasis",
    "LargeAreaEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized",
    "ZonePercentage",
    "GrayLevelVariance",
    "ZoneVariance",
    "ZoneEntropy",
    "LowGrayLevelZoneEmphasis",
    "HighGrayLevelZoneEmphasis",
    "SmallAreaLowGrayLevelEmphasis",
    "SmallAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
];

/// Connected zones of equal level as `(level, size)`, ordered by level and
/// then by first pixel in raster order.
pub fn zones(q: &QuantizedImage, connectivity: Connectivity) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for l in 1..=q.n_levels {
        let fg: Vec<bool> = q.levels.iter().map(|&v| v == l).collect();
        if !fg.iter().any(|&b| b) {
            continue;
        }
        for comp in label_components(&fg, q.h, q.w, connectivity) {
            out.push((l, comp.len()));
        }
    }
    out
}

/// Size-zone features in [`GLSZM_NAMES`] order.
pub fn glszm_features(q: &QuantizedImage, connectivity: Connectivity) -> Vec<f64> {
    size_features(&zones(q, connectivity), q.n_levels, q.roi_size())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_roi_is_one_zone() {
        let q = QuantizedImage::from_levels(2, 3, 4, vec![2; 6]).unwrap();
        assert_eq!(zones(&q, Connectivity::Eight), vec![(2, 6)]);
        let f = glszm_features(&q, Connectivity::Eight);
        assert!((f[6] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn two_blobs_same_level() {
        let q = QuantizedImage::from_levels(1, 6, 2, vec![1, 1, 0, 1, 1, 1]).unwrap();
        assert_eq!(zones(&q, Connectivity::Eight), vec![(1, 2), (1, 3)]);
    }

    #[test]
    fn checkerboard_zones_merge_diagonally() {
        let lv = (0..9).map(|i| 1 + ((i / 3 + i % 3) % 2)).collect();
        let q = QuantizedImage::from_levels(3, 3, 2, lv).unwrap();
        assert_eq!(zones(&q, Connectivity::Eight), vec![(1, 5), (2, 4)]);
        assert_eq!(glszm_features(&q, Connectivity::Four)[0], 1.0);
    }
}
