//! Per-case stages. Each stage reads its inputs from the bundle and writes
//! its outputs back at storage precision, so downstream stages see the same
//! values whether an upstream output was computed or loaded from disk.

use crate::bundle::CaseBundle;
use crate::cam_prompt::{box_mask, candidates_or_fallback, CandidateBox, PromptConfig};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::mcra::{aggregate, AggregationResult, CandidatePrediction, McraConfig};
use crate::neural::FeatureBlocks;
use crate::radiomics::{extract_all, RadiomicsConfig, RadiomicsVector, DEFAULT_SPACING_MM};
use crate::region_head::assemble_pool;
use crate::selection::format_real;
use crate::tensor::{resize_bilinear, Tensor};

use super::config::PoolConfig;

pub const CANDIDATE_BOXES: &str = "candidate_boxes";
pub const MCRA_WEIGHTS: &str = "mcra_weights";
pub const FUSED_MASK: &str = "fused_mask_logits";
pub const FUSED_CLS: &str = "fused_cls_logits";
pub const FUSED_EMBEDDING: &str = "fused_embedding";
pub const FUSED_BOX: &str = "fused_box";
pub const PRED_MASK: &str = "pred_mask";
pub const FEATURE_FUSED: &str = "feature_fused";
pub const POOL_VECTOR: &str = "pool_vector";
pub const RADIOMICS: &str = "radiomics";
pub const FINAL_PROB: &str = "final_prob";

/// Stage order with the tensors each one writes.
pub const STAGE_OUTPUTS: [(&str, &[&str]); 5] = [
    ("prompt", &[CANDIDATE_BOXES]),
    ("aggregate", &[MCRA_WEIGHTS, FUSED_MASK, FUSED_CLS, FUSED_EMBEDDING, FUSED_BOX, PRED_MASK]),
    ("features", &[FEATURE_FUSED]),
    ("pool", &[POOL_VECTOR]),
    ("radiomics", &[RADIOMICS]),
];

fn put(bundle: &mut CaseBundle, name: &str, t: Tensor) -> Tensor {
    let t = t.to_storage_precision();
    bundle.insert(name, t.clone());
    t
}

/// `[K, 6]` rows of `r0, c0, r1, c1, score, threshold`.
pub fn boxes_to_tensor(boxes: &[CandidateBox]) -> Result<Tensor> {
    let data = boxes
        .iter()
        .flat_map(|b| [b.r0 as f64, b.c0 as f64, b.r1 as f64, b.c1 as f64, b.score, b.source_threshold])
        .collect();
    Tensor::new(vec![boxes.len(), 6], data)
}

pub fn tensor_to_boxes(t: &Tensor) -> Result<Vec<CandidateBox>> {
    let (k, cols) = t.dims2()?;
    if cols != 6 {
        return Err(Error::shape(format!("`{CANDIDATE_BOXES}` must be [K, 6], got {:?}", t.shape())));
    }
    Ok((0..k)
        .map(|i| {
            let r = &t.data()[i * 6..(i + 1) * 6];
            CandidateBox {
                r0: r[0] as usize,
                c0: r[1] as usize,
                r1: r[2] as usize,
                c1: r[3] as usize,
                score: r[4],
                source_threshold: r[5],
            }
        })
        .collect())
}

/// Boxes from the heatmap; sets the `prompt_fallback` metadata flag.
pub fn run_prompt(bundle: &mut CaseBundle, cfg: &PromptConfig) -> Result<Vec<CandidateBox>> {
    let (boxes, fallback) = candidates_or_fallback(bundle.require("heatmap")?, cfg)?;
    let t = put(bundle, CANDIDATE_BOXES, boxes_to_tensor(&boxes)?);
    bundle.metadata.insert("prompt_fallback".into(), fallback.to_string());
    tensor_to_boxes(&t)
}

/// Candidate predictions paired with their boxes. When the bundle holds a
/// different number of candidates than boxes, the first `min` of each are
/// used and `candidate_mismatch` is recorded.
pub fn candidate_predictions(bundle: &mut CaseBundle, boxes: &[CandidateBox]) -> Result<Vec<CandidatePrediction>> {
    let k_masks = bundle.candidate_count();
    if k_masks == 0 {
        return Err(Error::MissingTensor("mask_logits_0".into()));
    }
    let k = k_masks.min(boxes.len());
    if k != k_masks || k != boxes.len() {
        bundle
            .metadata
            .insert("candidate_mismatch".into(), format!("{} boxes, {k_masks} candidates", boxes.len()));
    }
    (0..k)
        .map(|i| {
            Ok(CandidatePrediction {
                mask_logits: bundle.require(&format!("mask_logits_{i}"))?.clone(),
                cls_logits: bundle.require(&format!("cls_logits_{i}"))?.clone(),
                embedding: bundle.require(&format!("embedding_{i}"))?.clone(),
                saliency: boxes[i].score,
            })
        })
        .collect()
}

/// Weighted mean of the box extents, rounded outward.
pub fn fused_box(boxes: &[CandidateBox], w: &[f64]) -> CandidateBox {
    let avg = |f: fn(&CandidateBox) -> usize| boxes.iter().zip(w).map(|(b, wi)| wi * f(b) as f64).sum::<f64>();
    // guard against 0.999..9 rounding the wrong way
    let down = |x: f64| (x + 1e-9).floor().max(0.0) as usize;
    let up = |x: f64| (x - 1e-9).ceil().max(0.0) as usize;
    CandidateBox {
        r0: down(avg(|b| b.r0)),
        c0: down(avg(|b| b.c0)),
        r1: up(avg(|b| b.r1)),
        c1: up(avg(|b| b.c1)),
        score: boxes.iter().zip(w).map(|(b, wi)| wi * b.score).sum(),
        source_threshold: boxes.iter().zip(w).map(|(b, wi)| wi * b.source_threshold).sum(),
    }
}

/// Outputs of the aggregation stage as stored in the bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateOutputs {
    pub fused_mask: Tensor,
    pub fused_box: CandidateBox,
    pub pred_mask: Tensor,
    pub result: AggregationResult,
}

/// MCRA fusion, then the binarized lesion mask `σ(M_fused) > 0.5`. An empty
/// mask falls back to the fused box and sets `empty_mask_fallback`.
pub fn run_aggregate(bundle: &mut CaseBundle, boxes: &[CandidateBox], cfg: &McraConfig) -> Result<AggregateOutputs> {
    let cands = candidate_predictions(bundle, boxes)?;
    let text = bundle.require("text_embedding")?.clone();
    let res = aggregate(&cands, text.data(), cfg)?;
    let k = cands.len();
    let mut w = res.w_sal.clone();
    w.extend_from_slice(&res.w_sem);
    w.extend_from_slice(&res.w_final);
    put(bundle, MCRA_WEIGHTS, Tensor::new(vec![3, k], w)?);
    let fused_mask = put(bundle, FUSED_MASK, res.fused_mask.clone());
    put(bundle, FUSED_CLS, res.fused_logits.clone());
    put(bundle, FUSED_EMBEDDING, res.fused_embedding.clone());
    let fb = fused_box(&boxes[..k], &res.w_final);
    put(bundle, FUSED_BOX, Tensor::vector(vec![fb.r0 as f64, fb.c0 as f64, fb.r1 as f64, fb.c1 as f64])?);
    let (h, wd) = fused_mask.dims2()?;
    let mut pred = fused_mask.map(|z| if sigmoid(z) > 0.5 { 1.0 } else { 0.0 });
    let empty = pred.sum() == 0.0;
    if empty {
        pred = box_mask(&fb, h, wd)?;
    }
    let pred = put(bundle, PRED_MASK, pred);
    let md = &mut bundle.metadata;
    md.insert("consistency_loss".into(), format_real(res.consistency_loss));
    md.insert("high_set".into(), join(&res.high_set));
    md.insert("low_set".into(), join(&res.low_set));
    md.insert("promoted_argmax".into(), res.promoted_argmax.to_string());
    md.insert("zero_norm_embeddings".into(), join(&res.zero_norm));
    md.insert("empty_mask_fallback".into(), empty.to_string());
    Ok(AggregateOutputs { fused_mask, fused_box: fb, pred_mask: pred, result: res })
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn load_fused_box(bundle: &CaseBundle) -> Result<CandidateBox> {
    let t = bundle.require(FUSED_BOX)?;
    if t.len() != 4 {
        return Err(Error::shape(format!("`{FUSED_BOX}` must have 4 values")));
    }
    let d = t.data();
    Ok(CandidateBox {
        r0: d[0] as usize,
        c0: d[1] as usize,
        r1: d[2] as usize,
        c1: d[3] as usize,
        score: 0.0,
        source_threshold: 0.0,
    })
}

pub fn run_features(bundle: &mut CaseBundle, blocks: &FeatureBlocks) -> Result<Tensor> {
    let out = blocks.forward(bundle.require("feature_map")?)?;
    Ok(put(bundle, FEATURE_FUSED, out))
}

/// Block average for integer factors, bilinear otherwise.
pub fn resize_mask(mask: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (mh, mw) = mask.dims2()?;
    if mh % h == 0 && mw % w == 0 {
        let (fy, fx) = (mh / h, mw / w);
        return Tensor::from_fn2(h, w, |r, c| {
            let mut s = 0.0;
            for y in r * fy..(r + 1) * fy {
                for x in c * fx..(c + 1) * fx {
                    s += mask.at2(y, x);
                }
            }
            s / (fy * fx) as f64
        });
    }
    resize_bilinear(mask, h, w)
}

/// Multi-pooling of the fused feature map with the lesion and box masks
/// resampled to feature resolution.
pub fn run_pool(bundle: &mut CaseBundle, cfg: &PoolConfig) -> Result<Tensor> {
    let x = bundle.require(FEATURE_FUSED)?.clone();
    let (_, fh, fw) = x.dims3()?;
    let lesion = if cfg.soft_mask {
        bundle.require(FUSED_MASK)?.map(sigmoid)
    } else {
        bundle.require(PRED_MASK)?.clone()
    };
    let (h, w) = lesion.dims2()?;
    let bm = box_mask(&load_fused_box(bundle)?, h, w)?;
    let pool = assemble_pool(&x, &resize_mask(&lesion, fh, fw)?, &resize_mask(&bm, fh, fw)?, cfg.eps)?;
    Ok(put(bundle, POOL_VECTOR, Tensor::vector(pool.concatenated())?))
}

/// Spacing from the config, else the `spacing_mm` metadata, else the default.
pub fn resolve_spacing(bundle: &CaseBundle, cfg: &RadiomicsConfig) -> Result<f64> {
    if let Some(s) = cfg.spacing_mm {
        return Ok(s);
    }
    match bundle.metadata.get("spacing_mm") {
        Some(s) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| *v > 0.0)
            .ok_or_else(|| Error::invalid(format!("bad spacing_mm metadata `{s}`"))),
        None => Ok(DEFAULT_SPACING_MM),
    }
}

/// Radiomics over `mask_name` (the predicted lesion by default).
pub fn radiomics_of(bundle: &CaseBundle, mask_name: &str, cfg: &RadiomicsConfig) -> Result<RadiomicsVector> {
    let spacing = resolve_spacing(bundle, cfg)?;
    extract_all(bundle.require("image")?, bundle.require(mask_name)?, spacing, cfg)
}

pub fn run_radiomics(bundle: &mut CaseBundle, cfg: &RadiomicsConfig) -> Result<Tensor> {
    let v = radiomics_of(bundle, PRED_MASK, cfg)?;
    Ok(put(bundle, RADIOMICS, Tensor::vector(v.values)?))
}

/// Drops every output of the stages after `stage`.
pub fn invalidate_after(bundle: &mut CaseBundle, stage: usize) {
    for (_, outs) in &STAGE_OUTPUTS[stage + 1..] {
        for o in *outs {
            bundle.tensors.remove(*o);
        }
    }
    bundle.tensors.remove(FINAL_PROB);
}

fn has_all(bundle: &CaseBundle, names: &[&str]) -> bool {
    names.iter().all(|n| bundle.get(n).is_some())
}

/// Runs every per-case stage, reusing cached outputs. The first missing
/// stage output invalidates everything downstream of it.
pub fn run_case_stages(
    bundle: &mut CaseBundle,
    prompt: &PromptConfig,
    mcra: &McraConfig,
    blocks: &FeatureBlocks,
    pool: &PoolConfig,
    radiomics: &RadiomicsConfig,
) -> Result<()> {
    bundle.validate_spatial()?;
    if let Some(first_missing) = STAGE_OUTPUTS.iter().position(|(_, o)| !has_all(bundle, o)) {
        if first_missing + 1 < STAGE_OUTPUTS.len() {
            invalidate_after(bundle, first_missing);
        }
    }
    let boxes = match bundle.get(CANDIDATE_BOXES) {
        Some(t) => tensor_to_boxes(t)?,
        None => run_prompt(bundle, prompt)?,
    };
    if !has_all(bundle, STAGE_OUTPUTS[1].1) {
        run_aggregate(bundle, &boxes, mcra)?;
    }
    if bundle.get(FEATURE_FUSED).is_none() {
        run_features(bundle, blocks)?;
    }
    if bundle.get(POOL_VECTOR).is_none() {
        run_pool(bundle, pool)?;
    }
    if bundle.get(RADIOMICS).is_none() {
        run_radiomics(bundle, radiomics)?;
    }
    Ok(())
}
