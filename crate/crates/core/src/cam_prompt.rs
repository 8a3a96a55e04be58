//! Activation heatmap → ranked, deduplicated candidate boxes.
//!
//! The heatmap is binarized at each threshold, every connected component
//! becomes a box scored by its mean activation, and the pooled boxes are
//! ranked and greedily suppressed by IoU.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// How a box's confidence score is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Mean heatmap value over the box rectangle.
    #[default]
    BoxMean,
    /// Mean heatmap value over the component's own pixels.
    ComponentMean,
}

/// Axis-aligned box with inclusive pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateBox {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
    pub score: f64,
    #[serde(rename = "threshold")]
    pub source_threshold: f64,
}

impl CandidateBox {
    pub fn area(&self) -> usize {
        (self.r1 - self.r0 + 1) * (self.c1 - self.c0 + 1)
    }

    pub fn extents(&self) -> (usize, usize, usize, usize) {
        (self.r0, self.c0, self.r1, self.c1)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.r0 && r <= self.r1 && c >= self.c0 && c <= self.c1
    }

    fn intersection(&self, other: &CandidateBox) -> usize {
        let r0 = self.r0.max(other.r0);
        let c0 = self.c0.max(other.c0);
        let r1 = self.r1.min(other.r1);
        let c1 = self.c1.min(other.c1);
        if r0 > r1 || c0 > c1 {
            0
        } else {
            (r1 - r0 + 1) * (c1 - c0 + 1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub thresholds: Vec<f64>,
    pub top_k: usize,
    pub iou_dedup: f64,
    pub min_area: usize,
    pub connectivity: Connectivity,
    pub score_mode: ScoreMode,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            top_k: 3,
            iou_dedup: 0.5,
            min_area: 4,
            connectivity: Connectivity::Eight,
            score_mode: ScoreMode::BoxMean,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::invalid("at least one threshold is required"));
        }
        if self.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::invalid("thresholds must lie in (0, 1)"));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("thresholds must be strictly increasing"));
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.iou_dedup) {
            return Err(Error::invalid("iou_dedup must lie in [0, 1]"));
        }
        if self.min_area == 0 {
            return Err(Error::invalid("min_area must be positive"));
        }
        Ok(())
    }
}

/// Connected foreground components of a binary mask (values ≥ 0.5 are
/// foreground). Components are ordered by their first pixel in raster order
/// and each lists its pixels in raster order.
pub fn connected_components(mask: &Tensor, connectivity: Connectivity) -> Result<Vec<Vec<(usize, usize)>>> {
    let (h, w) = mask.dims2()?;
    let fg: Vec<bool> = mask.data().iter().map(|&v| v >= 0.5).collect();
    Ok(label_components(&fg, h, w, connectivity))
}

pub(crate) fn label_components(fg: &[bool], h: usize, w: usize, connectivity: Connectivity) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !fg[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (r, c) = (idx / w, idx % w);
            pixels.push((r, c));
            for (dr, dc) in neighbours(connectivity) {
                let nr = r as isize + dr;
                let nc = c as isize + dc;
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let n = nr as usize * w + nc as usize;
                if fg[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        pixels.sort_unstable();
        out.push(pixels);
    }
    out
}

fn neighbours(connectivity: Connectivity) -> &'static [(isize, isize)] {
    const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
    const EIGHT: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
    match connectivity {
        Connectivity::Four => &FOUR,
        Connectivity::Eight => &EIGHT,
    }
}

fn rect_mean(heatmap: &Tensor, r0: usize, c0: usize, r1: usize, c1: usize) -> f64 {
    let mut sum = 0.0;
    for r in r0..=r1 {
        for c in c0..=c1 {
            sum += heatmap.at2(r, c);
        }
    }
    sum / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64
}

/// One box per connected component of `{heatmap ≥ t}` whose pixel count is
/// at least `min_area`.
pub fn boxes_at_threshold(
    heatmap: &Tensor,
    t: f64,
    min_area: usize,
    connectivity: Connectivity,
    score_mode: ScoreMode,
) -> Result<Vec<CandidateBox>> {
    let (h, w) = heatmap.dims2()?;
    let fg: Vec<bool> = heatmap.data().iter().map(|&v| v >= t).collect();
    let mut boxes = Vec::new();
    for comp in label_components(&fg, h, w, connectivity) {
        if comp.len() < min_area {
            continue;
        }
        let r0 = comp.iter().map(|p| p.0).min().unwrap();
        let r1 = comp.iter().map(|p| p.0).max().unwrap();
        let c0 = comp.iter().map(|p| p.1).min().unwrap();
        let c1 = comp.iter().map(|p| p.1).max().unwrap();
        let score = match score_mode {
            ScoreMode::BoxMean => rect_mean(heatmap, r0, c0, r1, c1),
            ScoreMode::ComponentMean => {
                comp.iter().map(|&(r, c)| heatmap.at2(r, c)).sum::<f64>() / comp.len() as f64
            }
        };
        boxes.push(CandidateBox {
            r0,
            c0,
            r1,
            c1,
            score,
            source_threshold: t,
        });
    }
    Ok(boxes)
}

/// Intersection over union on the inclusive pixel grid.
pub fn iou_box(a: &CandidateBox, b: &CandidateBox) -> f64 {
    let inter = a.intersection(b);
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area() + b.area() - inter) as f64
}

/// Ranking order: score descending, then higher source threshold, then
/// smaller `(r0, c0, r1, c1)`.
fn rank_order(a: &CandidateBox, b: &CandidateBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.source_threshold.total_cmp(&a.source_threshold))
        .then(a.extents().cmp(&b.extents()))
}

/// Boxes pooled over all thresholds, ranked, suppressed at
/// `IoU > iou_dedup` and truncated to `top_k`. May be empty.
pub fn generate_candidates(heatmap: &Tensor, cfg: &PromptConfig) -> Result<Vec<CandidateBox>> {
    cfg.validate()?;
    let mut pool = Vec::new();
    for &t in &cfg.thresholds {
        pool.extend(boxes_at_threshold(heatmap, t, cfg.min_area, cfg.connectivity, cfg.score_mode)?);
    }
    pool.sort_by(rank_order);
    let mut kept: Vec<CandidateBox> = Vec::with_capacity(cfg.top_k);
    for b in pool {
        if kept.len() == cfg.top_k {
            break;
        }
        if kept.iter().all(|k| iou_box(k, &b) <= cfg.iou_dedup) {
            kept.push(b);
        }
    }
    Ok(kept)
}

/// Tight box around the top 1% of heatmap pixels (at least one pixel).
pub fn fallback_box(heatmap: &Tensor) -> Result<CandidateBox> {
    let (h, w) = heatmap.dims2()?;
    let n = h * w;
    let take = ((n as f64 * 0.01).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let data = heatmap.data();
    order.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
    let top = &order[..take];
    let r0 = top.iter().map(|i| i / w).min().unwrap();
    let r1 = top.iter().map(|i| i / w).max().unwrap();
    let c0 = top.iter().map(|i| i % w).min().unwrap();
    let c1 = top.iter().map(|i| i % w).max().unwrap();
    Ok(CandidateBox {
        r0,
        c0,
        r1,
        c1,
        score: rect_mean(heatmap, r0, c0, r1, c1),
        source_threshold: data[top[take - 1]].clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
    })
}

/// [`generate_candidates`], falling back to [`fallback_box`] when nothing
/// survives. The flag reports whether the fallback was used.
pub fn candidates_or_fallback(heatmap: &Tensor, cfg: &PromptConfig) -> Result<(Vec<CandidateBox>, bool)> {
    let boxes = generate_candidates(heatmap, cfg)?;
    if boxes.is_empty() {
        Ok((vec![fallback_box(heatmap)?], true))
    } else {
        Ok((boxes, false))
    }
}

/// Filled `[h, w]` rectangle mask of a box.
pub fn box_mask(b: &CandidateBox, h: usize, w: usize) -> Result<Tensor> {
    Tensor::from_fn2(h, w, |r, c| if b.contains(r, c) { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(r0: usize, c0: usize, r1: usize, c1: usize) -> CandidateBox {
        CandidateBox {
            r0,
            c0,
            r1,
            c1,
            score: 0.0,
            source_threshold: 0.5,
        }
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = Tensor::zeros(vec![5, 5]).unwrap();
        assert!(connected_components(&m, Connectivity::Eight).unwrap().is_empty());
    }

    #[test]
    fn diagonal_pixels_join_under_eight_connectivity() {
        let m = Tensor::from_fn2(3, 3, |r, c| if (r, c) == (0, 0) || (r, c) == (1, 1) { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(connected_components(&m, Connectivity::Eight).unwrap().len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).unwrap().len(), 2);
    }

    #[test]
    fn block_heatmap_gives_one_box() {
        let hm = Tensor::from_fn2(4, 4, |r, c| if (1..=2).contains(&r) && (1..=2).contains(&c) { 0.9 } else { 0.0 }).unwrap();
        let boxes = boxes_at_threshold(&hm, 0.5, 4, Connectivity::Eight, ScoreMode::BoxMean).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].extents(), (1, 1, 2, 2));
        assert!((boxes[0].score - 0.9).abs() < 1e-15);
    }

    #[test]
    fn uniform_and_empty_heatmaps() {
        let ones = Tensor::full(vec![6, 5], 1.0).unwrap();
        let b = boxes_at_threshold(&ones, 0.5, 4, Connectivity::Eight, ScoreMode::BoxMean).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].extents(), (0, 0, 5, 4));
        assert_eq!(b[0].score, 1.0);

        let zeros = Tensor::zeros(vec![6, 5]).unwrap();
        assert!(boxes_at_threshold(&zeros, 0.3, 4, Connectivity::Eight, ScoreMode::BoxMean)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou_box(&bx(0, 0, 3, 3), &bx(0, 0, 3, 3)), 1.0);
        assert_eq!(iou_box(&bx(0, 0, 3, 3), &bx(5, 5, 6, 6)), 0.0);
        let v = iou_box(&bx(0, 0, 9, 9), &bx(5, 5, 14, 14));
        assert!((v - 25.0 / 175.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_heatmap_collapses_to_single_box() {
        let hm = Tensor::full(vec![8, 8], 0.8).unwrap();
        let cfg = PromptConfig {
            thresholds: vec![0.3, 0.5, 0.7],
            ..Default::default()
        };
        let boxes = generate_candidates(&hm, &cfg).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].extents(), (0, 0, 7, 7));
        // ties on score resolve to the highest threshold
        assert_eq!(boxes[0].source_threshold, 0.7);
    }

    #[test]
    fn fallback_on_blank_heatmap() {
        let hm = Tensor::zeros(vec![10, 10]).unwrap();
        let (boxes, used) = candidates_or_fallback(&hm, &PromptConfig::default()).unwrap();
        assert!(used);
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].extents(), (0, 0, 0, 0));

        let hot = Tensor::from_fn2(10, 10, |r, c| if (r, c) == (7, 3) { 0.2 } else { 0.0 }).unwrap();
        let b = fallback_box(&hot).unwrap();
        assert_eq!(b.extents(), (7, 3, 7, 3));
    }

    #[test]
    fn config_validation() {
        let mut cfg = PromptConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.thresholds = vec![0.5, 0.4];
        assert!(cfg.validate().is_err());
        cfg.thresholds = vec![0.5];
        cfg.top_k = 0;
        assert!(cfg.validate().is_err());
    }
}
