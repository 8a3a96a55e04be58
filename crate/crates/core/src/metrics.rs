//! Dual-branch logit fusion, overlap metrics, ROC AUC, thresholded
//! diagnostic report and deep/radiomic cross-correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{pearson, softmax};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub alpha_ext: f64,
    /// Add the branch probabilities instead of their logits, then renormalize.
    pub probability_space: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { alpha_ext: 1.0, probability_space: false }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_ext >= 0.0 && self.alpha_ext.is_finite()) {
            return Err(Error::invalid("alpha_ext must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `y_sam + alpha_ext · y_rad`.
pub fn fuse_logits(y_sam: &[f64], y_rad: &[f64], alpha_ext: f64) -> Result<Vec<f64>> {
    if y_sam.len() != y_rad.len() {
        return Err(Error::shape(format!("branch lengths {} and {} differ", y_sam.len(), y_rad.len())));
    }
    Ok(y_sam.iter().zip(y_rad).map(|(a, b)| a + alpha_ext * b).collect())
}

/// Class probabilities of the fused prediction.
pub fn fused_probabilities(y_sam: &[f64], y_rad: &[f64], cfg: &FusionConfig) -> Result<Vec<f64>> {
    if cfg.probability_space {
        let p = fuse_logits(&softmax(y_sam), &softmax(y_rad), cfg.alpha_ext)?;
        let s: f64 = p.iter().sum();
        Ok(p.iter().map(|v| v / s).collect())
    } else {
        Ok(softmax(&fuse_logits(y_sam, y_rad, cfg.alpha_ext)?))
    }
}

/// Overlap of two binary masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub dice: f64,
    pub iou: f64,
    /// Both masks were empty; scored as perfect agreement.
    pub both_empty: bool,
}

/// Pixels `≥ 0.5` count as foreground.
pub fn dice_iou(pred: &Tensor, gt: &Tensor) -> Result<Overlap> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("prediction and ground truth differ in shape"));
    }
    let (mut a, mut b, mut inter) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p >= 0.5, g >= 0.5);
        a += p as usize;
        b += g as usize;
        inter += (p && g) as usize;
    }
    if a + b == 0 {
        return Ok(Overlap { dice: 1.0, iou: 1.0, both_empty: true });
    }
    let union = a + b - inter;
    Ok(Overlap {
        dice: 2.0 * inter as f64 / (a + b) as f64,
        iou: inter as f64 / union as f64,
        both_empty: false,
    })
}

fn class_counts(labels: &[usize]) -> Result<(usize, usize)> {
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC by rank sums with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Thresholded diagnostic summary; rates are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub acc: f64,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub threshold: f64,
    /// No case was predicted positive; precision and F1 reported as 0.
    pub precision_undefined: bool,
}

/// Scores `≥ threshold` are predicted positive.
pub fn classify_report(scores: &[f64], labels: &[usize], threshold: f64) -> Result<DiagnosticReport> {
    let auc = roc_auc(scores, labels)?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = labels.len() as f64;
    let sensitivity = tp as f64 / (tp + fn_) as f64;
    let specificity = tn as f64 / (tn + fp) as f64;
    let precision_undefined = tp + fp == 0;
    let precision = if precision_undefined { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let f1 = if precision + sensitivity > 0.0 {
        2.0 * precision * sensitivity / (precision + sensitivity)
    } else {
        0.0
    };
    Ok(DiagnosticReport {
        acc: (tp + tn) as f64 / n,
        auc,
        sensitivity,
        specificity,
        precision,
        f1,
        tp,
        tn,
        fp,
        fn_,
        threshold,
        precision_undefined,
    })
}

/// Pearson correlations between every deep column and every radiomic column.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossCorrelation {
    /// `rho[i][j]` pairs deep column `i` with radiomic column `j`.
    pub rho: Vec<Vec<f64>>,
    pub constant_deep: Vec<usize>,
    pub constant_radiomic: Vec<usize>,
}

impl CrossCorrelation {
    pub fn max_abs(&self) -> f64 {
        self.rho.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

/// Inputs are column lists; a constant column correlates as 0.
pub fn cross_correlation(deep: &[Vec<f64>], radiomic: &[Vec<f64>]) -> Result<CrossCorrelation> {
    let n = deep.first().or(radiomic.first()).map_or(0, Vec::len);
    if deep.iter().chain(radiomic).any(|c| c.len() != n) {
        return Err(Error::shape("columns differ in length"));
    }
    if n < 3 {
        return Err(Error::invalid("at least three rows are required"));
    }
    let is_const = |c: &Vec<f64>| c.iter().all(|&v| v == c[0]);
    let constant_deep = (0..deep.len()).filter(|&i| is_const(&deep[i])).collect();
    let constant_radiomic = (0..radiomic.len()).filter(|&j| is_const(&radiomic[j])).collect();
    let rho = deep
        .iter()
        .map(|d| radiomic.iter().map(|r| pearson(d, r).unwrap_or(0.0)).collect())
        .collect();
    Ok(CrossCorrelation { rho, constant_deep, constant_radiomic })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_arithmetic() {
        let f = fuse_logits(&[0.2, 0.8], &[0.4, 0.6], 1.0).unwrap();
        assert!((f[0] - 0.6).abs() < 1e-15 && (f[1] - 1.4).abs() < 1e-15);
        assert_eq!(fuse_logits(&[0.2, 0.8], &[0.4, 0.6], 0.0).unwrap(), vec![0.2, 0.8]);
        assert!(fuse_logits(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn overlap_cases() {
        let a = Tensor::new(vec![1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(vec![1, 4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let o = dice_iou(&a, &b).unwrap();
        assert_eq!(o.dice, 0.5);
        assert!((o.iou - 1.0 / 3.0).abs() < 1e-15);
        let z = Tensor::zeros(vec![1, 4]).unwrap();
        assert!(dice_iou(&z, &z).unwrap().both_empty);
    }

    #[test]
    fn auc_hand_case() {
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.3; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn report_six_samples() {
        let s = [0.9, 0.6, 0.4, 0.7, 0.2, 0.1];
        let y = [1, 1, 1, 0, 0, 0];
        let r = classify_report(&s, &y, 0.5).unwrap();
        assert_eq!((r.tp, r.fn_, r.fp, r.tn), (2, 1, 1, 2));
        assert!((r.acc - 4.0 / 6.0).abs() < 1e-15);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        let none = classify_report(&[0.1, 0.2, 0.3], &[0, 1, 0], 0.5).unwrap();
        assert!(none.precision_undefined && none.precision == 0.0);
    }

    #[test]
    fn correlation_flags_constants() {
        let a = vec![1.0, 2.0, 3.0];
        let c = cross_correlation(&[a.clone(), vec![5.0; 3]], &[a.iter().map(|v| -v).collect()]).unwrap();
        assert!((c.rho[0][0] + 1.0).abs() < 1e-15);
        assert_eq!(c.rho[1][0], 0.0);
        assert_eq!(c.constant_deep, vec![1]);
    }
}
