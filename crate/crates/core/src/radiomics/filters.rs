//! Derived images: single-level Haar sub-bands and Laplacian of Gaussian.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WAVELET_BANDS: [&str; 4] = ["LL", "LH", "HL", "HH"];

/// Haar sub-bands at half resolution. For the block `[[a, b], [c, d]]` the
/// first letter is the filter along columns, the second along rows:
/// `LL = (a+b+c+d)/2`, `HL = (a−b+c−d)/2`, `LH = (a+b−c−d)/2`,
/// `HH = (a−b−c+d)/2`. Odd sizes are padded by edge replication.
pub fn haar_coefficients(image: &Tensor) -> Result<[Tensor; 4]> {
    let (h, w) = image.dims2()?;
    let (hh, hw) = (h.div_ceil(2), w.div_ceil(2));
    let px = |r: usize, c: usize| image.at2(r.min(h - 1), c.min(w - 1));
    let mut bands: [Vec<f64>; 4] = Default::default();
    for b in bands.iter_mut() {
        b.reserve(hh * hw);
    }
    for i in 0..hh {
        for j in 0..hw {
            let (a, b) = (px(2 * i, 2 * j), px(2 * i, 2 * j + 1));
            let (c, d) = (px(2 * i + 1, 2 * j), px(2 * i + 1, 2 * j + 1));
            bands[0].push((a + b + c + d) / 2.0);
            bands[1].push((a + b - c - d) / 2.0);
            bands[2].push((a - b + c - d) / 2.0);
            bands[3].push((a - b - c + d) / 2.0);
        }
    }
    let [ll, lh, hl, hhb] = bands;
    Ok([
        Tensor::new(vec![hh, hw], ll)?,
        Tensor::new(vec![hh, hw], lh)?,
        Tensor::new(vec![hh, hw], hl)?,
        Tensor::new(vec![hh, hw], hhb)?,
    ])
}

/// Haar sub-bands replicated back to the input size, in
/// [`WAVELET_BANDS`] order.
pub fn filter_wavelet(image: &Tensor) -> Result<Vec<(String, Tensor)>> {
    let (h, w) = image.dims2()?;
    let coeffs = haar_coefficients(image)?;
    WAVELET_BANDS
        .iter()
        .zip(coeffs.iter())
        .map(|(name, band)| Ok((name.to_string(), Tensor::from_fn2(h, w, |r, c| band.at2(r / 2, c / 2))?)))
        .collect()
}

fn gaussian_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let radius = (4.0 * sigma).ceil() as isize;
    let xs: Vec<f64> = (-radius..=radius).map(|x| x as f64).collect();
    let mut g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    let s2 = sigma * sigma;
    let mut g2: Vec<f64> = xs.iter().zip(&g).map(|(x, gv)| (x * x / (s2 * s2) - 1.0 / s2) * gv).collect();
    let drift: f64 = g2.iter().sum();
    g2.iter_mut().zip(&g).for_each(|(v, gv)| *v -= drift * gv);
    (g, g2)
}

fn convolve_rows(data: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        let src = &data[row * w..(row + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let cc = (c as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * src[cc];
            }
            out[row * w + c] = acc;
        }
    }
    out
}

fn convolve_cols(data: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        for (t, kv) in k.iter().enumerate() {
            let rr = (row as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
            let src = &data[rr * w..(rr + 1) * w];
            let dst = &mut out[row * w..(row + 1) * w];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += kv * s);
        }
    }
    out
}

/// Laplacian of Gaussian at `sigma_px = sigma_mm / spacing_mm`, separable,
/// kernel radius `ceil(4 sigma_px)`, edge replication at the border.
pub fn filter_log(image: &Tensor, sigma_mm: f64, spacing_mm: f64) -> Result<Tensor> {
    let (h, w) = image.dims2()?;
    if !(sigma_mm > 0.0) || !(spacing_mm > 0.0) {
        return Err(Error::invalid("sigma and spacing must be positive"));
    }
    let (g, g2) = gaussian_kernels(sigma_mm / spacing_mm);
    let d = image.data();
    let xx = convolve_cols(&convolve_rows(d, h, w, &g2), h, w, &g);
    let yy = convolve_cols(&convolve_rows(d, h, w, &g), h, w, &g2);
    Tensor::new(vec![h, w], xx.iter().zip(&yy).map(|(a, b)| a + b).collect())
}

/// Filter name for a LoG scale, e.g. `log-sigma-2-0-mm-3D`.
pub fn log_filter_name(sigma_mm: f64) -> String {
    let s = format!("{sigma_mm:.1}").replace('.', "-");
    format!("log-sigma-{s}-mm-3D")
}
