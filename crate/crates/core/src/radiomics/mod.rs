//! Hand-crafted lesion descriptors: intensity statistics, mask geometry and
//! co-occurrence, run-length and size-zone texture, computed over the
//! original image and its wavelet and LoG derivatives.
//!
//! Names follow `<filter>_<family>_<feature>`, e.g.
//! `wavelet-HH_glcm_Idmn` or `log-sigma-2-0-mm-3D_glrlm_GrayLevelNonUniformity`.
//! `wavelet-H` is accepted as an alias for `wavelet-HH`.

mod filters;
mod first_order;
mod glcm;
mod glrlm;
mod glszm;
mod quantize;
mod shape;

pub use filters::{filter_log, filter_wavelet, haar_coefficients, log_filter_name, WAVELET_BANDS};
pub use first_order::{first_order, FIRST_ORDER_NAMES};
pub use glcm::{glcm_features, glcm_from_matrix, glcm_matrix, DEFAULT_OFFSETS, GLCM_NAMES};
pub use glrlm::{glrlm_features, glrlm_features_dirs, run_lengths, GLRLM_NAMES};
pub use glszm::{glszm_features, zones, GLSZM_NAMES};
pub use quantize::{quantize, QuantizedImage};
pub use shape::{contour_length, crack_perimeter, shape2d, SHAPE_NAMES};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cam_prompt::Connectivity;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiomicsConfig {
    pub n_levels: usize,
    /// Pixel spacing; `None` defers to the bundle's `spacing_mm` metadata,
    /// then to [`DEFAULT_SPACING_MM`].
    pub spacing_mm: Option<f64>,
    pub log_sigmas_mm: Vec<f64>,
    pub wavelet: bool,
    pub zone_connectivity: Connectivity,
}

pub const DEFAULT_SPACING_MM: f64 = 0.1;

impl Default for RadiomicsConfig {
    fn default() -> Self {
        Self {
            n_levels: 32,
            spacing_mm: None,
            log_sigmas_mm: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            wavelet: true,
            zone_connectivity: Connectivity::Eight,
        }
    }
}

impl RadiomicsConfig {
    pub fn filter_names(&self) -> Vec<String> {
        let mut names = vec!["original".to_string()];
        if self.wavelet {
            names.extend(WAVELET_BANDS.iter().map(|b| format!("wavelet-{b}")));
        }
        names.extend(self.log_sigmas_mm.iter().map(|&s| log_filter_name(s)));
        names
    }

    /// Column names of [`extract_all`] in output order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, filter) in self.filter_names().iter().enumerate() {
            out.extend(FIRST_ORDER_NAMES.iter().map(|n| format!("{filter}_firstorder_{n}")));
            if k == 0 {
                out.extend(SHAPE_NAMES.iter().map(|n| format!("{filter}_shape2D_{n}")));
            }
            out.extend(GLCM_NAMES.iter().map(|n| format!("{filter}_glcm_{n}")));
            out.extend(GLRLM_NAMES.iter().map(|n| format!("{filter}_glrlm_{n}")));
            out.extend(GLSZM_NAMES.iter().map(|n| format!("{filter}_glszm_{n}")));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.n_levels < 2 {
            return Err(Error::invalid("at least two gray levels are required"));
        }
        if self.log_sigmas_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("LoG sigmas must be positive"));
        }
        if let Some(s) = self.spacing_mm {
            if !(s > 0.0) {
                return Err(Error::invalid("spacing must be positive"));
            }
        }
        Ok(())
    }
}

/// Ordered named feature values of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiomicsVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl RadiomicsVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value by name; `wavelet-H_` resolves to `wavelet-HH_`.
    pub fn get(&self, name: &str) -> Option<f64> {
        let canonical = canonical_name(name);
        self.names.iter().position(|n| *n == canonical).map(|i| self.values[i])
    }
}

/// Maps the `wavelet-H_` alias onto `wavelet-HH_`.
pub fn canonical_name(name: &str) -> String {
    match name.strip_prefix("wavelet-H_") {
        Some(rest) => format!("wavelet-HH_{rest}"),
        None => name.to_string(),
    }
}

fn texture_block(img: &Tensor, mask: &Tensor, cfg: &RadiomicsConfig) -> Result<Vec<f64>> {
    let mut v = first_order(img, mask, cfg.n_levels)?;
    let q = quantize(img, mask, cfg.n_levels)?;
    v.extend(glcm_features(&q, &DEFAULT_OFFSETS)?);
    v.extend(glrlm_features(&q));
    v.extend(glszm_features(&q, cfg.zone_connectivity));
    Ok(v)
}

/// Full feature vector over every configured filter image.
pub fn extract_all(image: &Tensor, mask: &Tensor, spacing_mm: f64, cfg: &RadiomicsConfig) -> Result<RadiomicsVector> {
    cfg.validate()?;
    if image.shape() != mask.shape() {
        return Err(Error::shape("mask and image differ in shape"));
    }
    let mut images = vec![image.clone()];
    if cfg.wavelet {
        images.extend(filter_wavelet(image)?.into_iter().map(|(_, t)| t));
    }
    for &s in &cfg.log_sigmas_mm {
        images.push(filter_log(image, s, spacing_mm)?);
    }
    let blocks: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| texture_block(img, mask, cfg))
        .collect::<Result<_>>()?;
    let shape = shape2d(mask)?;
    let per_filter = FIRST_ORDER_NAMES.len();
    let mut values = Vec::new();
    for (k, block) in blocks.into_iter().enumerate() {
        if k == 0 {
            values.extend_from_slice(&block[..per_filter]);
            values.extend_from_slice(&shape);
            values.extend_from_slice(&block[per_filter..]);
        } else {
            values.extend(block);
        }
    }
    let names = cfg.feature_names();
    debug_assert_eq!(names.len(), values.len());
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("feature {} is not finite", names[i])));
    }
    Ok(RadiomicsVector { names, values })
}
