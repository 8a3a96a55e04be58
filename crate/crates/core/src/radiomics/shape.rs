use std::f64::consts::PI;

use crate::cam_prompt::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::quantize::roi_of;

pub const SHAPE_NAMES: [&str; 8] = [
    "Area",
    "Perimeter",
    "PerimeterToArea",
    "Circularity",
    "MajorAxisLength",
    "MinorAxisLength",
    "Elongation",
    "MaximumDiameter",
];

/// Number of pixel edges separating the ROI from background or the border.
pub fn crack_perimeter(roi: &[bool], h: usize, w: usize) -> usize {
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && r < h as isize && c < w as isize && roi[r as usize * w + c as usize];
    let mut p = 0;
    for r in 0..h as isize {
        for c in 0..w as isize {
            if !inside(r, c) {
                continue;
            }
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                if !inside(r + dr, c + dc) {
                    p += 1;
                }
            }
        }
    }
    p
}

const MOORE: [(isize, isize); 8] = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)];

/// Length of the outer boundary of every 8-connected component, traced
/// through boundary pixel centres (unit axial steps, `sqrt 2` diagonal).
pub fn contour_length(roi: &[bool], h: usize, w: usize) -> f64 {
    let fg = |r: isize, c: isize| r >= 0 && c >= 0 && r < h as isize && c < w as isize && roi[r as usize * w + c as usize];
    let mut total = 0.0;
    for comp in label_components(roi, h, w, Connectivity::Eight) {
        let start = (comp[0].0 as isize, comp[0].1 as isize);
        // the raster-first pixel always has background to its west
        let start_back = 0usize;
        let (mut p, mut b) = (start, start_back);
        let limit = 8 * comp.len() + 16;
        for _ in 0..limit {
            let mut moved = false;
            for i in 1..=8 {
                let d = (b + i) % 8;
                let q = (p.0 + MOORE[d].0, p.1 + MOORE[d].1);
                if fg(q.0, q.1) {
                    let prev = (b + i - 1) % 8;
                    let back = (p.0 + MOORE[prev].0, p.1 + MOORE[prev].1);
                    total += if MOORE[d].0 != 0 && MOORE[d].1 != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                    let delta = (back.0 - q.0, back.1 - q.1);
                    b = MOORE.iter().position(|&m| m == delta).expect("backtrack is a neighbour");
                    p = q;
                    moved = true;
                    break;
                }
            }
            if !moved || (p == start && b == start_back) {
                break;
            }
        }
    }
    total
}

/// Mask geometry in pixel units, in [`SHAPE_NAMES`] order. Axis lengths are
/// `4·sqrt(λ)` of the pixel-coordinate covariance; circularity uses the
/// traced boundary length (1 when that length is 0); the maximum diameter
/// spans pixel corners.
pub fn shape2d(mask: &Tensor) -> Result<Vec<f64>> {
    let (h, w) = mask.dims2()?;
    let roi = roi_of(mask);
    let pix: Vec<(f64, f64)> = (0..h * w).filter(|&i| roi[i]).map(|i| ((i / w) as f64, (i % w) as f64)).collect();
    if pix.is_empty() {
        return Err(Error::EmptyMask);
    }
    let area = pix.len() as f64;
    let perimeter = crack_perimeter(&roi, h, w) as f64;
    let contour = contour_length(&roi, h, w);

    let (mr, mc) = (
        pix.iter().map(|p| p.0).sum::<f64>() / area,
        pix.iter().map(|p| p.1).sum::<f64>() / area,
    );
    let (mut srr, mut scc, mut src) = (0.0, 0.0, 0.0);
    for &(r, c) in &pix {
        srr += (r - mr) * (r - mr);
        scc += (c - mc) * (c - mc);
        src += (r - mr) * (c - mc);
    }
    let (a, b, d) = (srr / area, scc / area, src / area);
    let tr = a + b;
    let disc = (((a - b) / 2.0).powi(2) + d * d).sqrt();
    let l1 = (tr / 2.0 + disc).max(0.0);
    let l2 = (tr / 2.0 - disc).max(0.0);
    let elongation = if l1 > 0.0 { (l2 / l1).sqrt() } else { 1.0 };

    let boundary: Vec<usize> = (0..h * w)
        .filter(|&i| {
            roi[i] && {
                let (r, c) = ((i / w) as isize, (i % w) as isize);
                [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| {
                    let (nr, nc) = (r + dr, c + dc);
                    nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize || !roi[nr as usize * w + nc as usize]
                })
            }
        })
        .collect();
    let mut corners: Vec<(usize, usize)> = boundary
        .iter()
        .flat_map(|&i| {
            let (r, c) = (i / w, i % w);
            [(r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)]
        })
        .collect();
    corners.sort_unstable();
    corners.dedup();
    let mut dmax2 = 0usize;
    for (i, p) in corners.iter().enumerate() {
        for q in &corners[i + 1..] {
            let dr = p.0.abs_diff(q.0);
            let dc = p.1.abs_diff(q.1);
            dmax2 = dmax2.max(dr * dr + dc * dc);
        }
    }

    Ok(vec![
        area,
        perimeter,
        perimeter / area,
        if contour > 0.0 { 4.0 * PI * area / (contour * contour) } else { 1.0 },
        4.0 * l1.sqrt(),
        4.0 * l2.sqrt(),
        elongation,
        (dmax2 as f64).sqrt(),
    ])
}
