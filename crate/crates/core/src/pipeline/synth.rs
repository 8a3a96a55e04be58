//! Seeded synthetic cases with planted lesions, class-dependent texture and
//! simulated encoder outputs.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bundle::{save_bundle, CaseBundle};
use crate::cam_prompt::{candidates_or_fallback, CandidateBox, PromptConfig};
use crate::error::{Error, Result};
use crate::tensor::{normalize_minmax, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionShape {
    Ellipse,
    Blob,
    /// Ellipses and blobs alternately.
    #[default]
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_cases: usize,
    pub size: usize,
    pub shape: LesionShape,
    /// Scales the benign/malignant texture difference.
    pub texture_contrast: f64,
    /// Scales heatmap clutter, candidate mask errors and embedding noise; 0
    /// yields exact candidates.
    pub noise: f64,
    pub embed_dim: usize,
    pub feature_channels: usize,
    pub feature_size: usize,
    pub spacing_mm: f64,
    pub prompt: PromptConfig,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_cases: 200,
            size: 64,
            shape: LesionShape::Mixed,
            texture_contrast: 1.0,
            noise: 0.5,
            embed_dim: 8,
            feature_channels: 8,
            feature_size: 16,
            spacing_mm: 1.0,
            prompt: PromptConfig::default(),
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_cases < 2 {
            return Err(Error::invalid("at least two cases are needed for both classes"));
        }
        if self.size < 32 {
            return Err(Error::invalid("image size must be at least 32"));
        }
        if self.feature_size == 0 || self.size % self.feature_size != 0 {
            return Err(Error::invalid("feature_size must divide the image size"));
        }
        if self.embed_dim < 3 || self.feature_channels == 0 {
            return Err(Error::invalid("embed_dim ≥ 3 and feature_channels ≥ 1 are required"));
        }
        if !(self.noise >= 0.0 && self.texture_contrast >= 0.0 && self.spacing_mm > 0.0) {
            return Err(Error::invalid("noise, contrast and spacing must be non-negative"));
        }
        self.prompt.validate()
    }
}

/// Outside-box suppression of candidate logits saturates at this distance.
const SUPPRESS_PX: f64 = 4.0;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_blur(t: &Tensor, sigma: f64) -> Tensor {
    if sigma <= 0.0 {
        return t.clone();
    }
    let (h, w) = t.dims2().expect("2-D");
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let d = j as isize - r;
                    let (yy, xx) = if along_rows {
                        ((y as isize + d).clamp(0, h as isize - 1) as usize, x)
                    } else {
                        (y, (x as isize + d).clamp(0, w as isize - 1) as usize)
                    };
                    acc += kv * src[yy * w + xx];
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let a = pass(t.data(), false);
    Tensor::new(vec![h, w], pass(&a, true)).expect("shape")
}

fn noise_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(vec![h, w], (0..h * w).map(|_| normal(rng)).collect()).expect("shape")
}

/// Unit-variance field with correlation length `sigma`.
fn smooth_field(h: usize, w: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let f = gaussian_blur(&noise_field(h, w, rng), sigma);
    let sd = (f.data().iter().map(|v| v * v).sum::<f64>() / f.len() as f64).sqrt();
    f.map(|v| v / sd.max(1e-12))
}

fn lesion_mask(size: usize, blob: bool, rng: &mut ChaCha8Rng) -> Tensor {
    let s = size as f64;
    let cy = rng.random_range(0.33 * s..0.67 * s);
    let cx = rng.random_range(0.33 * s..0.67 * s);
    let a = rng.random_range(0.11 * s..0.2 * s);
    let b = rng.random_range(0.11 * s..0.2 * s);
    let rot = rng.random_range(0.0..PI);
    let lobes = rng.random_range(3..6) as f64;
    let phase = rng.random_range(0.0..2.0 * PI);
    let amp = if blob { rng.random_range(0.12..0.25) } else { 0.0 };
    Tensor::from_fn2(size, size, |r, c| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        let u = dx * rot.cos() + dy * rot.sin();
        let v = -dx * rot.sin() + dy * rot.cos();
        let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
        let theta = v.atan2(u);
        if rho <= 1.0 + amp * (lobes * theta + phase).sin() {
            1.0
        } else {
            0.0
        }
    })
    .expect("shape")
}

/// Chebyshev distance from `(r, c)` to the box; 0 inside.
fn box_distance(b: &CandidateBox, r: usize, c: usize) -> f64 {
    let dr = if r < b.r0 { b.r0 - r } else { r.saturating_sub(b.r1) };
    let dc = if c < b.c0 { b.c0 - c } else { c.saturating_sub(b.c1) };
    dr.max(dc) as f64
}

fn shifted(t: &Tensor, dy: isize, dx: isize) -> Tensor {
    let (h, w) = t.dims2().expect("2-D");
    Tensor::from_fn2(h, w, |r, c| {
        let (sr, sc) = (r as isize - dy, c as isize - dx);
        if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
            0.0
        } else {
            t.at2(sr as usize, sc as usize)
        }
    })
    .expect("shape")
}

fn area_downsample(t: &Tensor, out: usize) -> Tensor {
    let (h, w) = t.dims2().expect("2-D");
    let (fy, fx) = (h / out, w / out);
    Tensor::from_fn2(out, out, |r, c| {
        let mut s = 0.0;
        for y in r * fy..(r + 1) * fy {
            for x in c * fx..(c + 1) * fx {
                s += t.at2(y, x);
            }
        }
        s / (fy * fx) as f64
    })
    .expect("shape")
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

/// Case `index` with label `y`; a deterministic function of `(spec, index, y)`.
pub fn synth_case(spec: &SyntheticSpec, index: usize, y: usize) -> Result<CaseBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let n = spec.size;
    let noise = spec.noise;
    let sign = 2.0 * y as f64 - 1.0;
    let blob = match spec.shape {
        LesionShape::Ellipse => false,
        LesionShape::Blob => true,
        LesionShape::Mixed => index % 2 == 1,
    };
    let gt = lesion_mask(n, blob, &mut rng);

    // independent per-branch latent severities
    let u_rad = sign + 0.6 * normal(&mut rng);
    let u_vis = sign + 0.6 * normal(&mut rng);

    let fine = 0.5 + 0.5 * (2.0 * u_rad).tanh();
    let coarse_tex = smooth_field(n, n, 2.5, &mut rng);
    let fine_tex = noise_field(n, n, &mut rng);
    let background = smooth_field(n, n, 6.0, &mut rng);
    let speckle = noise_field(n, n, &mut rng);
    let contrast = spec.texture_contrast;
    let image = Tensor::from_fn2(n, n, |r, c| {
        let i = r * n + c;
        let bg = 0.3 + 0.05 * background.data()[i];
        let lesion = 0.62
            + contrast * (0.1 * (1.0 - fine) * coarse_tex.data()[i] + 0.1 * fine * fine_tex.data()[i]);
        let v = if gt.data()[i] > 0.5 { lesion } else { bg };
        (v + 0.02 * speckle.data()[i]).clamp(0.0, 1.0)
    })?;

    let clutter = smooth_field(n, n, 3.0, &mut rng);
    let heat_src = Tensor::from_fn2(n, n, |r, c| gt.at2(r, c) + 0.25 * noise * clutter.at2(r, c))?;
    let heatmap = normalize_minmax(&gaussian_blur(&heat_src, 2.0 * noise));
    let (boxes, _) = candidates_or_fallback(&heatmap, &spec.prompt)?;

    let d = spec.embed_dim;
    let text = unit(d, 0);
    let description: Vec<f64> = (0..d)
        .map(|i| text[i] + if i == 1 { 0.8 * sign } else { 0.0 })
        .collect();

    let mut bundle = CaseBundle::new(format!("case_{index:04}")).with_label(y as i64);
    bundle.metadata.insert("spacing_mm".into(), format!("{}", spec.spacing_mm));
    bundle.metadata.insert("source".into(), "synthetic".into());
    let gt_area = gt.sum().max(1.0);
    for (k, b) in boxes.iter().enumerate() {
        let quality = rng.random_range(0.5..1.5);
        let dy = (noise * quality * normal(&mut rng)).round() as isize;
        let dx = (noise * quality * normal(&mut rng)).round() as isize;
        let moved = shifted(&gt, dy, dx);
        let pix = noise_field(n, n, &mut rng);
        let logits = Tensor::from_fn2(n, n, |r, c| {
            let outside = box_distance(b, r, c).min(SUPPRESS_PX);
            4.0 * (2.0 * moved.at2(r, c) - 1.0) + 2.0 * noise * quality * pix.at2(r, c) - 1.5 * outside
        })?;
        // region embeddings align with the text in proportion to lesion coverage
        let covered = (0..n * n).filter(|&i| gt.data()[i] > 0.5 && b.contains(i / n, i % n)).count() as f64 / gt_area;
        let emb: Vec<f64> = (0..d)
            .map(|i| {
                let base = match i {
                    0 => covered,
                    1 => 0.5 * sign * covered,
                    2 => 1.0 - covered,
                    _ => 0.0,
                };
                base + 0.3 * noise * quality * normal(&mut rng)
            })
            .collect();
        let cls = vec![0.0, sign * covered + 2.0 * noise * normal(&mut rng)];
        bundle.insert(format!("mask_logits_{k}"), logits);
        bundle.insert(format!("embedding_{k}"), Tensor::vector(emb)?);
        bundle.insert(format!("cls_logits_{k}"), Tensor::vector(cls)?);
    }

    let m = area_downsample(&gt, spec.feature_size);
    let fs = spec.feature_size;
    let cch = spec.feature_channels;
    let vis = (1.5 * u_vis).tanh();
    let mut fmap = Vec::with_capacity(cch * fs * fs);
    for ch in 0..cch {
        let a = 0.5 + 0.25 * (ch % 3) as f64;
        let b = if ch % 2 == 0 { 0.35 } else { -0.25 };
        for i in 0..fs * fs {
            fmap.push(a * m.data()[i] + b * vis * m.data()[i] + 0.15 * normal(&mut rng));
        }
    }

    bundle.insert("image", image);
    bundle.insert("gt_mask", gt);
    bundle.insert("heatmap", heatmap);
    bundle.insert("text_embedding", Tensor::vector(text)?);
    bundle.insert("description_embedding", Tensor::vector(description)?);
    bundle.insert("feature_map", Tensor::new(vec![cch, fs, fs], fmap)?);
    Ok(bundle)
}

/// Balanced labels in a seeded random order.
pub fn synth_labels(spec: &SyntheticSpec) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..spec.n_cases).map(|i| usize::from(i < spec.n_cases / 2)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    labels.shuffle(&mut rng);
    labels
}

/// Writes `n_cases` bundles under `out_dir/<case_id>/` and returns their paths.
pub fn synth_dataset(spec: &SyntheticSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    use rayon::prelude::*;
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let labels = synth_labels(spec);
    labels
        .par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let b = synth_case(spec, i, y)?;
            let p = out_dir.join(&b.case_id);
            save_bundle(&b, &p)?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_balanced_and_cases_deterministic() {
        let spec = SyntheticSpec { n_cases: 10, ..Default::default() };
        let y = synth_labels(&spec);
        assert_eq!(y.iter().sum::<usize>(), 5);
        let a = synth_case(&spec, 3, y[3]).unwrap();
        let b = synth_case(&spec, 3, y[3]).unwrap();
        assert_eq!(a, b);
        assert!(a.candidate_count() >= 1);
        a.validate_spatial().unwrap();
    }

    #[test]
    fn zero_noise_candidate_box_is_gt_box() {
        let spec = SyntheticSpec { n_cases: 4, noise: 0.0, ..Default::default() };
        let b = synth_case(&spec, 0, 1).unwrap();
        let gt = b.require("gt_mask").unwrap();
        let (h, w) = gt.dims2().unwrap();
        let pts: Vec<(usize, usize)> = (0..h * w).filter(|i| gt.data()[*i] > 0.5).map(|i| (i / w, i % w)).collect();
        let heat = b.require("heatmap").unwrap();
        let (boxes, fallback) = candidates_or_fallback(heat, &spec.prompt).unwrap();
        assert!(!fallback);
        let bx = &boxes[0];
        assert_eq!(bx.r0, pts.iter().map(|p| p.0).min().unwrap());
        assert_eq!(bx.r1, pts.iter().map(|p| p.0).max().unwrap());
        assert_eq!(bx.c0, pts.iter().map(|p| p.1).min().unwrap());
        assert_eq!(bx.c1, pts.iter().map(|p| p.1).max().unwrap());
    }
}
