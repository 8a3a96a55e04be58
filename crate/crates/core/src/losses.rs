//! Stage-one objective terms with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, log_sum_exp, norm2, sigmoid, softmax, softplus};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub gamma: f64,
    /// Per-class weights `w_y`.
    pub class_weights: [f64; 2],
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            class_weights: [1.0, 1.0],
        }
    }
}

impl FocalConfig {
    /// Weights `N / (2 N_c)` so each class contributes equally.
    pub fn balanced(labels: &[usize], gamma: f64) -> Result<Self> {
        let n1 = labels.iter().filter(|&&y| y == 1).count();
        let n0 = labels.len() - n1;
        if n0 == 0 || n1 == 0 {
            return Err(Error::SingleClass);
        }
        let n = labels.len() as f64;
        Ok(Self {
            gamma,
            class_weights: [n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)],
        })
    }
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} outside 0..{k}")));
    }
    Ok(())
}

/// Focal loss of one sample and its gradient with respect to the logits.
pub fn focal_sample(z: &[f64], y: usize, cfg: &FocalConfig) -> (f64, Vec<f64>) {
    let w = cfg.class_weights[y];
    let g = cfg.gamma;
    let lse = log_sum_exp(z);
    let log_p = z[y] - lse;
    let p = softmax(z);
    let py = p[y];
    let q = 1.0 - py;
    let loss = -w * q.powf(g) * log_p;
    let grad = (0..z.len())
        .map(|k| {
            if k == y {
                w * (g * py * q.powf(g) * log_p - q.powf(g + 1.0))
            } else if q == 0.0 {
                0.0
            } else {
                // p_k · q^{γ-1} evaluated as (p_k / q) · q^γ
                let pk_over_q = p[k] / q;
                -w * pk_over_q * (g * py * q.powf(g) * log_p - q.powf(g + 1.0))
            }
        })
        .collect();
    (loss, grad)
}

/// Mean over samples of `-w_y (1 - p_y)^γ log p_y`, `p = softmax(logits)`.
pub fn focal_loss(logits: &Tensor, labels: &[usize], cfg: &FocalConfig) -> Result<f64> {
    Ok(focal_loss_grad(logits, labels, cfg)?.0)
}

/// Focal loss and its gradient `[N, C]` with respect to the logits.
pub fn focal_loss_grad(logits: &Tensor, labels: &[usize], cfg: &FocalConfig) -> Result<(f64, Tensor)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if k != 2 {
        return Err(Error::shape("focal loss expects two classes"));
    }
    check_labels(labels, k)?;
    if logits.first_non_finite().is_some() {
        return Err(Error::invalid("non-finite logits"));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (i, &y) in labels.iter().enumerate() {
        let (l, g) = focal_sample(&logits.data()[i * k..(i + 1) * k], y, cfg);
        total += l;
        grad.extend(g.into_iter().map(|v| v / n as f64));
    }
    Ok((total / n as f64, Tensor::new(vec![n, k], grad)?))
}

fn check_binary(gt: &Tensor) -> Result<()> {
    if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("ground-truth mask must be binary"));
    }
    Ok(())
}

pub const DICE_SMOOTH: f64 = 1.0;

/// `w_bce · BCE + w_dice · (1 - softDice)` with BCE averaged over pixels.
pub fn bce_dice_loss(mask_logits: &Tensor, gt: &Tensor, w_bce: f64, w_dice: f64) -> Result<f64> {
    Ok(bce_dice_grad(mask_logits, gt, w_bce, w_dice)?.0)
}

pub fn bce_dice_grad(mask_logits: &Tensor, gt: &Tensor, w_bce: f64, w_dice: f64) -> Result<(f64, Tensor)> {
    if mask_logits.shape() != gt.shape() {
        return Err(Error::shape("mask logits and ground truth differ in shape"));
    }
    check_binary(gt)?;
    let n = gt.len() as f64;
    let m = mask_logits.data();
    let g = gt.data();
    let bce = m.iter().zip(g).map(|(&x, &t)| softplus(x) - t * x).sum::<f64>() / n;
    let p: Vec<f64> = m.iter().map(|&x| sigmoid(x)).collect();
    let inter = dot(&p, g);
    let s = p.iter().sum::<f64>() + g.iter().sum::<f64>() + DICE_SMOOTH;
    let dice = (2.0 * inter + DICE_SMOOTH) / s;
    let loss = w_bce * bce + w_dice * (1.0 - dice);
    let grad = p
        .iter()
        .zip(g)
        .map(|(&pi, &t)| {
            let d_dice = (2.0 * t * s - (2.0 * inter + DICE_SMOOTH)) / (s * s);
            w_bce * (pi - t) / n - w_dice * d_dice * pi * (1.0 - pi)
        })
        .collect();
    Ok((loss, Tensor::new(mask_logits.shape().to_vec(), grad)?))
}

pub const TEXT_TEMPERATURE: f64 = 0.07;

/// Gradients of the text auxiliary loss for both inputs.
#[derive(Clone, Debug)]
pub struct TextAuxGrad {
    pub region: Tensor,
    pub text: Tensor,
}

/// Symmetric InfoNCE over cosine similarities: row `i` of each matrix is
/// the positive for row `i` of the other.
pub fn text_aux_loss(region: &Tensor, text: &Tensor, temperature: f64) -> Result<f64> {
    Ok(text_aux_grad(region, text, temperature)?.0)
}

pub fn text_aux_grad(region: &Tensor, text: &Tensor, temperature: f64) -> Result<(f64, TextAuxGrad)> {
    let (n, d) = region.dims2()?;
    if text.dims2()? != (n, d) {
        return Err(Error::shape("region and text embeddings differ in shape"));
    }
    if n < 2 {
        return Err(Error::invalid("at least two pairs are needed for in-batch negatives"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let rows = |t: &Tensor| -> Result<Vec<(Vec<f64>, f64)>> {
        (0..n)
            .map(|i| {
                let r = t.data()[i * d..(i + 1) * d].to_vec();
                let nr = norm2(&r);
                if nr == 0.0 {
                    return Err(Error::invalid(format!("zero-norm embedding row {i}")));
                }
                Ok((r.iter().map(|v| v / nr).collect(), nr))
            })
            .collect()
    };
    let r = rows(region)?;
    let t = rows(text)?;
    let cos: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dot(&r[i].0, &t[j].0)).collect()).collect();
    let s: Vec<Vec<f64>> = cos.iter().map(|row| row.iter().map(|c| c / temperature).collect()).collect();

    let mut loss = 0.0;
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        let p = softmax(&s[i]);
        loss += log_sum_exp(&s[i]) - s[i][i];
        for j in 0..n {
            g[i][j] += 0.5 * (p[j] - if i == j { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| s[i][j]).collect();
        let p = softmax(&col);
        loss += log_sum_exp(&col) - col[j];
        for i in 0..n {
            g[i][j] += 0.5 * (p[i] - if i == j { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    loss /= 2.0 * n as f64;

    // d cos(a, b) / d a = (b̂ - cos · â) / ‖a‖
    let mut gr = vec![0.0; n * d];
    let mut gt = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..n {
            let coef = g[i][j] / temperature;
            if coef == 0.0 {
                continue;
            }
            for k in 0..d {
                gr[i * d + k] += coef * (t[j].0[k] - cos[i][j] * r[i].0[k]) / r[i].1;
                gt[j * d + k] += coef * (r[i].0[k] - cos[i][j] * t[j].0[k]) / t[j].1;
            }
        }
    }
    Ok((
        loss,
        TextAuxGrad {
            region: Tensor::new(vec![n, d], gr)?,
            text: Tensor::new(vec![n, d], gt)?,
        },
    ))
}

/// Term weights `(λ_cls, λ_loc, λ_text)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Weights {
    pub lambda_cls: f64,
    pub lambda_loc: f64,
    pub lambda_text: f64,
}

impl Default for Stage1Weights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_loc: 1.0,
            lambda_text: 0.5,
        }
    }
}

impl Stage1Weights {
    pub fn new(lambda_cls: f64, lambda_loc: f64, lambda_text: f64) -> Result<Self> {
        let w = Self {
            lambda_cls,
            lambda_loc,
            lambda_text,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_cls, self.lambda_loc, self.lambda_text];
        if all.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if all.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

pub fn stage1_loss(cls: f64, loc: f64, text: f64, w: &Stage1Weights) -> Result<f64> {
    w.validate()?;
    if ![cls, loc, text].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite loss term"));
    }
    Ok(w.lambda_cls * cls + w.lambda_loc * loc + w.lambda_text * text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_with_zero_gamma_is_cross_entropy() {
        let z = Tensor::new(vec![3, 2], vec![0.3, -1.2, 2.0, 0.5, -0.7, -0.1]).unwrap();
        let y = [0, 1, 1];
        let cfg = FocalConfig {
            gamma: 0.0,
            class_weights: [1.0, 1.0],
        };
        let ce: f64 = (0..3)
            .map(|i| {
                let row = &z.data()[i * 2..i * 2 + 2];
                log_sum_exp(row) - row[y[i]]
            })
            .sum::<f64>()
            / 3.0;
        assert!((focal_loss(&z, &y, &cfg).unwrap() - ce).abs() < 1e-12);
    }

    #[test]
    fn focal_vanishes_on_confident_logits() {
        let z = Tensor::new(vec![2, 2], vec![40.0, -40.0, -40.0, 40.0]).unwrap();
        let (l, g) = focal_loss_grad(&z, &[0, 1], &FocalConfig::default()).unwrap();
        assert!(l < 1e-30);
        assert!(g.data().iter().all(|v| v.is_finite()));
        assert!(focal_loss(&z, &[0, 2], &FocalConfig::default()).is_err());
    }

    #[test]
    fn bce_dice_cases() {
        let gt = Tensor::from_fn2(4, 4, |r, _| if r < 2 { 1.0 } else { 0.0 }).unwrap();
        let perfect = gt.map(|g| if g == 1.0 { 30.0 } else { -30.0 });
        assert!(bce_dice_loss(&perfect, &gt, 0.5, 0.5).unwrap() < 1e-6);

        let half = Tensor::zeros(vec![4, 4]).unwrap();
        let bce = bce_dice_loss(&half, &gt, 1.0, 0.0).unwrap();
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-15);
        let dice_term = bce_dice_loss(&half, &gt, 0.0, 1.0).unwrap();
        assert!((dice_term - (1.0 - 9.0 / 17.0)).abs() < 1e-15);

        let empty = Tensor::zeros(vec![4, 4]).unwrap();
        let neg = empty.map(|_| -30.0);
        assert!(bce_dice_loss(&neg, &empty, 0.0, 1.0).unwrap() < 1e-10);
    }

    #[test]
    fn text_aux_cases() {
        let e = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let l = text_aux_loss(&e, &e, 1.0).unwrap();
        let x = std::f64::consts::E;
        assert!((l + (x / (x + 1.0)).ln()).abs() < 1e-14);

        let same = Tensor::full(vec![3, 4], 0.7).unwrap();
        assert!((text_aux_loss(&same, &same, 0.07).unwrap() - 3f64.ln()).abs() < 1e-12);

        assert!(text_aux_loss(&e, &e, 1e-3).unwrap() < 1e-12);
        let z = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(text_aux_loss(&z, &e, 1.0).is_err());
    }

    #[test]
    fn stage1_weighting() {
        let w = Stage1Weights::new(1.0, 1.0, 1.0).unwrap();
        assert!((stage1_loss(0.1, 0.2, 0.3, &w).unwrap() - 0.6).abs() < 1e-15);
        let c = Stage1Weights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(stage1_loss(0.4, 9.0, 9.0, &c).unwrap(), 0.4);
        assert!(Stage1Weights::new(0.0, 0.0, 0.0).is_err());
    }
}
