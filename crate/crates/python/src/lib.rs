//! Python bindings. Arrays cross the boundary as nested lists of floats.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lesionkit_core::cam_prompt::{candidates_or_fallback, PromptConfig};
use lesionkit_core::mcra::{aggregate as mcra_aggregate, CandidatePrediction, McraConfig};
use lesionkit_core::metrics::{dice_iou, roc_auc as core_auc};
use lesionkit_core::pipeline::{run_pipeline as core_run, synth_dataset, PipelineConfig, SyntheticSpec};
use lesionkit_core::radiomics::{extract_all, RadiomicsConfig};
use lesionkit_core::Tensor;

fn err(e: lesionkit_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn grid(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Tensor::new(vec![h, w], rows.concat()).map_err(err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let w = t.shape()[t.ndim() - 1];
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}

/// Candidate boxes `(r0, c0, r1, c1, score)` of a heatmap, rows and columns inclusive.
#[pyfunction]
#[pyo3(signature = (heatmap, top_k=3))]
fn prompt_boxes(heatmap: Vec<Vec<f64>>, top_k: usize) -> PyResult<Vec<(usize, usize, usize, usize, f64)>> {
    let cfg = PromptConfig { top_k, ..PromptConfig::default() };
    let (boxes, _) = candidates_or_fallback(&grid(heatmap)?, &cfg).map_err(err)?;
    Ok(boxes.iter().map(|b| (b.r0, b.c0, b.r1, b.c1, b.score)).collect())
}

/// Aggregates K candidates; returns weights, partition, fused mask logits and the consistency loss.
#[pyfunction]
#[pyo3(signature = (mask_logits, cls_logits, embeddings, saliency, text_embedding, alpha=0.5, theta=None))]
fn aggregate<'py>(
    py: Python<'py>,
    mask_logits: Vec<Vec<Vec<f64>>>,
    cls_logits: Vec<Vec<f64>>,
    embeddings: Vec<Vec<f64>>,
    saliency: Vec<f64>,
    text_embedding: Vec<f64>,
    alpha: f64,
    theta: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let k = mask_logits.len();
    if cls_logits.len() != k || embeddings.len() != k || saliency.len() != k {
        return Err(PyValueError::new_err("candidate lists differ in length"));
    }
    let mut cands = Vec::with_capacity(k);
    for (((m, c), e), s) in mask_logits.into_iter().zip(cls_logits).zip(embeddings).zip(saliency) {
        cands.push(CandidatePrediction {
            mask_logits: grid(m)?,
            cls_logits: Tensor::vector(c).map_err(err)?,
            embedding: Tensor::vector(e).map_err(err)?,
            saliency: s,
        });
    }
    let cfg = McraConfig { alpha, theta, ..McraConfig::default() };
    let r = mcra_aggregate(&cands, &text_embedding, &cfg).map_err(err)?;
    let d = PyDict::new_bound(py);
    d.set_item("w_sal", r.w_sal)?;
    d.set_item("w_sem", r.w_sem)?;
    d.set_item("w_final", r.w_final)?;
    d.set_item("high_set", r.high_set)?;
    d.set_item("low_set", r.low_set)?;
    d.set_item("promoted_argmax", r.promoted_argmax)?;
    d.set_item("fused_mask", rows(&r.fused_mask))?;
    d.set_item("fused_logits", r.fused_logits.data().to_vec())?;
    d.set_item("teacher", rows(&r.teacher))?;
    d.set_item("consistency_loss", r.consistency_loss)?;
    Ok(d)
}

/// Named radiomics features of an image and binary ROI.
#[pyfunction]
#[pyo3(signature = (image, mask, spacing_mm=0.1, n_levels=32))]
fn radiomics(image: Vec<Vec<f64>>, mask: Vec<Vec<f64>>, spacing_mm: f64, n_levels: usize) -> PyResult<Vec<(String, f64)>> {
    let cfg = RadiomicsConfig { n_levels, ..RadiomicsConfig::default() };
    let v = extract_all(&grid(image)?, &grid(mask)?, spacing_mm, &cfg).map_err(err)?;
    Ok(v.names.into_iter().zip(v.values).collect())
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<usize>) -> PyResult<f64> {
    core_auc(&scores, &labels).map_err(err)
}

/// `(dice, iou)` of two binary masks.
#[pyfunction]
fn dice(pred: Vec<Vec<f64>>, gt: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let o = dice_iou(&grid(pred)?, &grid(gt)?).map_err(err)?;
    Ok((o.dice, o.iou))
}

/// Writes a seeded synthetic dataset; returns the number of bundles.
#[pyfunction]
#[pyo3(signature = (out_dir, n_cases=40, size=64, noise=0.5, seed=42))]
fn synth(out_dir: &str, n_cases: usize, size: usize, noise: f64, seed: u64) -> PyResult<usize> {
    let spec = SyntheticSpec { n_cases, size, noise, seed, ..SyntheticSpec::default() };
    Ok(synth_dataset(&spec, Path::new(out_dir)).map_err(err)?.len())
}

/// Runs the full pipeline; returns `(exit_code, report_json)`.
#[pyfunction]
#[pyo3(signature = (in_dir, out_dir, config=None, workers=1))]
fn run_pipeline(in_dir: &str, out_dir: &str, config: Option<&str>, workers: usize) -> PyResult<(i32, String)> {
    let cfg = match config {
        Some(p) => PipelineConfig::load(Path::new(p)).map_err(err)?,
        None => PipelineConfig::default(),
    };
    let s = core_run(&cfg, Path::new(in_dir), Path::new(out_dir), workers).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((s.exit_code, s.report.to_json()))
}

#[pymodule]
fn lesionkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(prompt_boxes, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(radiomics, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
