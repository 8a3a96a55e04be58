//! Multi-candidate region aggregation.
//!
//! K candidate predictions (mask logits, class logits, embedding, saliency)
//! are weighted by a blend of saliency and text-similarity distributions,
//! soft-fused, and split into a confident teacher subset and an uncertain
//! subset that is pulled towards the teacher by a focal-style consistency
//! penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm2, sigmoid, softmax};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePrediction {
    pub mask_logits: Tensor,
    pub cls_logits: Tensor,
    pub embedding: Tensor,
    pub saliency: f64,
}

/// Space in which candidate masks are fused.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionSpace {
    /// Convex combination of raw logits.
    #[default]
    Logit,
    /// Convex combination of sigmoid probabilities, mapped back to logits.
    Probability,
}

/// Reduction of the squared residual inside the consistency loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsReduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McraConfig {
    pub tau_sal: f64,
    pub tau_sem: f64,
    pub alpha: f64,
    /// Teacher threshold; `None` means `1/K`.
    pub theta: Option<f64>,
    pub gamma: f64,
    pub fusion: FusionSpace,
    pub reduction: ConsReduction,
}

impl Default for McraConfig {
    fn default() -> Self {
        Self {
            tau_sal: 0.5,
            tau_sem: 0.5,
            alpha: 0.5,
            theta: None,
            gamma: 2.0,
            fusion: FusionSpace::Logit,
            reduction: ConsReduction::Sum,
        }
    }
}

impl McraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_sal > 0.0 && self.tau_sal.is_finite()) {
            return Err(Error::invalid("tau_sal must be positive"));
        }
        if !(self.tau_sem > 0.0 && self.tau_sem.is_finite()) {
            return Err(Error::invalid("tau_sem must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        if let Some(t) = self.theta {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::invalid("theta must lie in [0, 1)"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be positive"));
        }
        Ok(())
    }

    pub fn theta_for(&self, k: usize) -> f64 {
        self.theta.unwrap_or(1.0 / k as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregationResult {
    pub w_sal: Vec<f64>,
    pub w_sem: Vec<f64>,
    pub w_final: Vec<f64>,
    pub fused_mask: Tensor,
    pub fused_logits: Tensor,
    pub fused_embedding: Tensor,
    pub high_set: Vec<usize>,
    pub low_set: Vec<usize>,
    pub teacher: Tensor,
    pub consistency_loss: f64,
    /// Candidates whose cosine was forced to 0 by a zero-norm vector.
    pub zero_norm: Vec<usize>,
    /// The high set was empty and the argmax was promoted.
    pub promoted_argmax: bool,
}

/// `softmax(s / tau)`.
pub fn saliency_weights(s: &[f64], tau: f64) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::invalid("at least one candidate is required"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite saliency score"));
    }
    let scaled: Vec<f64> = s.iter().map(|v| v / tau).collect();
    Ok(softmax(&scaled))
}

/// Cosine of each embedding with `f_text`; zero-norm vectors give 0 and are
/// reported in the second element.
pub fn cosine_scores(embeddings: &[&[f64]], f_text: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
    let nt = norm2(f_text);
    let mut flagged = Vec::new();
    let mut out = Vec::with_capacity(embeddings.len());
    for (j, e) in embeddings.iter().enumerate() {
        if e.len() != f_text.len() {
            return Err(Error::shape(format!(
                "embedding {j} has dimension {}, text embedding has {}",
                e.len(),
                f_text.len()
            )));
        }
        let ne = norm2(e);
        if ne == 0.0 || nt == 0.0 {
            flagged.push(j);
            out.push(0.0);
        } else {
            out.push((dot(e, f_text) / (ne * nt)).clamp(-1.0, 1.0));
        }
    }
    Ok((out, flagged))
}

/// `softmax(cos(e_j, f_text) / tau)` plus the zero-norm flags.
pub fn semantic_weights(embeddings: &[&[f64]], f_text: &[f64], tau: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    let (cos, flagged) = cosine_scores(embeddings, f_text)?;
    Ok((saliency_weights(&cos, tau)?, flagged))
}

/// `(1 - alpha) * w_sal + alpha * w_sem`.
pub fn final_weights(w_sal: &[f64], w_sem: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha must lie in [0, 1]"));
    }
    if w_sal.len() != w_sem.len() {
        return Err(Error::shape("weight vectors differ in length"));
    }
    Ok(w_sal
        .iter()
        .zip(w_sem)
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect())
}

fn check_candidates(candidates: &[CandidatePrediction]) -> Result<()> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::invalid("at least one candidate is required"))?;
    first.mask_logits.dims2()?;
    for (j, c) in candidates.iter().enumerate().skip(1) {
        if c.mask_logits.shape() != first.mask_logits.shape()
            || c.cls_logits.shape() != first.cls_logits.shape()
            || c.embedding.shape() != first.embedding.shape()
        {
            return Err(Error::shape(format!("candidate {j} disagrees in shape with candidate 0")));
        }
    }
    Ok(())
}

fn weighted_sum<'a>(parts: impl Iterator<Item = (&'a Tensor, f64)>, like: &Tensor) -> Tensor {
    let mut acc = vec![0.0; like.len()];
    for (t, w) in parts {
        for (a, v) in acc.iter_mut().zip(t.data()) {
            *a += w * v;
        }
    }
    Tensor::new(like.shape().to_vec(), acc).expect("shape taken from an existing tensor")
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Convex combination of masks, class logits and embeddings under `w`.
pub fn soft_fuse(
    candidates: &[CandidatePrediction],
    w: &[f64],
    space: FusionSpace,
) -> Result<(Tensor, Tensor, Tensor)> {
    check_candidates(candidates)?;
    if w.len() != candidates.len() {
        return Err(Error::shape(format!(
            "{} weights for {} candidates",
            w.len(),
            candidates.len()
        )));
    }
    let first = &candidates[0];
    let mask = match space {
        FusionSpace::Logit => weighted_sum(candidates.iter().map(|c| &c.mask_logits).zip(w.iter().copied()), &first.mask_logits),
        FusionSpace::Probability => {
            let probs: Vec<Tensor> = candidates.iter().map(|c| c.mask_logits.map(sigmoid)).collect();
            weighted_sum(probs.iter().zip(w.iter().copied()), &first.mask_logits).map(logit)
        }
    };
    let logits = weighted_sum(candidates.iter().map(|c| &c.cls_logits).zip(w.iter().copied()), &first.cls_logits);
    let emb = weighted_sum(candidates.iter().map(|c| &c.embedding).zip(w.iter().copied()), &first.embedding);
    Ok((mask, logits, emb))
}

/// `H = {j : w_j ≥ theta}`, `L` the rest. An empty `H` is replaced by the
/// argmax (lowest index on ties); the flag reports the promotion.
pub fn partition_confidence(w: &[f64], theta: f64) -> (Vec<usize>, Vec<usize>, bool) {
    let mut high: Vec<usize> = (0..w.len()).filter(|&j| w[j] >= theta).collect();
    let mut promoted = false;
    if high.is_empty() && !w.is_empty() {
        let mut best = 0;
        for j in 1..w.len() {
            if w[j] > w[best] {
                best = j;
            }
        }
        high.push(best);
        promoted = true;
    }
    let low = (0..w.len()).filter(|j| !high.contains(j)).collect();
    (high, low, promoted)
}

/// `sigmoid(Σ_{j∈H} w̃_j M_j)` with `w̃` the weights renormalized over `H`.
pub fn teacher_mask(candidates: &[CandidatePrediction], high: &[usize], w: &[f64]) -> Result<Tensor> {
    if high.is_empty() {
        return Err(Error::invalid("teacher subset is empty"));
    }
    let total: f64 = high.iter().map(|&j| w[j]).sum();
    let like = &candidates[high[0]].mask_logits;
    let fused = if total > 0.0 {
        weighted_sum(high.iter().map(|&j| (&candidates[j].mask_logits, w[j] / total)), like)
    } else {
        let u = 1.0 / high.len() as f64;
        weighted_sum(high.iter().map(|&j| (&candidates[j].mask_logits, u)), like)
    };
    Ok(fused.map(sigmoid))
}

fn residual_norm(m: &Tensor, teacher: &Tensor, reduction: ConsReduction) -> f64 {
    let s: f64 = m
        .data()
        .iter()
        .zip(teacher.data())
        .map(|(&x, &p)| {
            let d = sigmoid(x) - p;
            d * d
        })
        .sum();
    match reduction {
        ConsReduction::Sum => s,
        ConsReduction::Mean => s / m.len() as f64,
    }
}

/// `(1/|L|) Σ_{j∈L} (1 - w_j)^γ ‖σ(M_j) − P‖²`; 0 for empty `L`.
pub fn consistency_loss(
    candidates: &[CandidatePrediction],
    low: &[usize],
    w: &[f64],
    teacher: &Tensor,
    gamma: f64,
    reduction: ConsReduction,
) -> Result<f64> {
    if low.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &j in low {
        let m = &candidates[j].mask_logits;
        if m.shape() != teacher.shape() {
            return Err(Error::shape("candidate mask and teacher differ in shape"));
        }
        total += (1.0 - w[j]).powf(gamma) * residual_norm(m, teacher, reduction);
    }
    Ok(total / low.len() as f64)
}

/// Gradient of the consistency loss with respect to every candidate's mask
/// logits. The teacher is a constant, so entries for `H` are exactly zero.
pub fn consistency_grad(
    candidates: &[CandidatePrediction],
    low: &[usize],
    w: &[f64],
    teacher: &Tensor,
    gamma: f64,
    reduction: ConsReduction,
) -> Vec<Tensor> {
    let mut grads: Vec<Tensor> = candidates.iter().map(|c| c.mask_logits.map(|_| 0.0)).collect();
    if low.is_empty() {
        return grads;
    }
    let n = teacher.len() as f64;
    for &j in low {
        let mut scale = (1.0 - w[j]).powf(gamma) / low.len() as f64;
        if reduction == ConsReduction::Mean {
            scale /= n;
        }
        let g = grads[j].data_mut();
        for ((gi, &x), &p) in g.iter_mut().zip(candidates[j].mask_logits.data()).zip(teacher.data()) {
            let s = sigmoid(x);
            *gi = scale * 2.0 * (s - p) * s * (1.0 - s);
        }
    }
    grads
}

/// Full aggregation in order: saliency, semantic, final weights, fusion,
/// partition, teacher, consistency loss.
pub fn aggregate(candidates: &[CandidatePrediction], f_text: &[f64], cfg: &McraConfig) -> Result<AggregationResult> {
    cfg.validate()?;
    check_candidates(candidates)?;
    let k = candidates.len();
    let s: Vec<f64> = candidates.iter().map(|c| c.saliency).collect();
    let w_sal = saliency_weights(&s, cfg.tau_sal)?;
    let embs: Vec<&[f64]> = candidates.iter().map(|c| c.embedding.data()).collect();
    let (w_sem, zero_norm) = semantic_weights(&embs, f_text, cfg.tau_sem)?;
    let w_final = final_weights(&w_sal, &w_sem, cfg.alpha)?;
    let (fused_mask, fused_logits, fused_embedding) = soft_fuse(candidates, &w_final, cfg.fusion)?;
    let (high_set, low_set, promoted_argmax) = partition_confidence(&w_final, cfg.theta_for(k));
    let teacher = teacher_mask(candidates, &high_set, &w_final)?;
    let consistency_loss = consistency_loss(candidates, &low_set, &w_final, &teacher, cfg.gamma, cfg.reduction)?;
    Ok(AggregationResult {
        w_sal,
        w_sem,
        w_final,
        fused_mask,
        fused_logits,
        fused_embedding,
        high_set,
        low_set,
        teacher,
        consistency_loss,
        zero_norm,
        promoted_argmax,
    })
}
