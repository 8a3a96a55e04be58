use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{list_bundles, load_bundle, save_bundle, CaseBundle};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softmax};
use crate::metrics::{classify_report, cross_correlation, dice_iou, fused_probabilities, roc_auc, DiagnosticReport};
use crate::neural::FeatureBlocks;
use crate::region_head::{mlp_forward, train_head, MlpHead};
use crate::selection::{fit_selection, format_real, FeatureMatrix, SelectionModel};
use crate::tensor::Tensor;

use super::config::{FeatureConfig, PipelineConfig};
use super::stages::{run_case_stages, FINAL_PROB, POOL_VECTOR, PRED_MASK, RADIOMICS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

const FINGERPRINT_KEY: &str = "stage_fingerprint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSummary {
    pub n: usize,
    #[serde(rename = "mDSC")]
    pub mdsc: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    pub both_empty: usize,
}

/// Diagnostic metrics in percent, rounded to two decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSummary {
    pub n: usize,
    #[serde(rename = "ACC")]
    pub acc: f64,
    #[serde(rename = "AUC")]
    pub auc: f64,
    #[serde(rename = "Sens")]
    pub sens: f64,
    #[serde(rename = "Spec")]
    pub spec: f64,
    #[serde(rename = "Precision")]
    pub precision: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub threshold: f64,
    pub precision_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    #[serde(rename = "visual_AUC")]
    pub visual_auc: f64,
    #[serde(rename = "radiomics_AUC")]
    pub radiomics_auc: f64,
    #[serde(rename = "fused_AUC")]
    pub fused_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub n_features: usize,
    pub n_after_variance: usize,
    pub mrmr_k: usize,
    pub n_selected: usize,
    pub lambda: f64,
    pub selected_names: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_cases: usize,
    pub n_processed: usize,
    pub n_failed: usize,
    pub failures: Vec<CaseFailure>,
    pub n_train: usize,
    pub n_val: usize,
    pub segmentation: Option<SegmentationSummary>,
    pub diagnosis: Option<DiagnosisSummary>,
    pub branches: Option<BranchSummary>,
    pub selection: Option<SelectionSummary>,
    /// Largest |Pearson ρ| between pooled deep features and selected radiomics.
    pub max_abs_cross_correlation: Option<f64>,
    pub dataset_error: Option<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn exit_code(&self) -> i32 {
        if self.n_cases == 0 || self.n_failed > 0 || self.dataset_error.is_some() {
            EXIT_PARTIAL
        } else {
            EXIT_OK
        }
    }
}

pub fn pct(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

fn frac4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

pub fn summarize_segmentation(pairs: &[(&Tensor, &Tensor)]) -> Result<Option<SegmentationSummary>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut dice = 0.0;
    let mut iou = 0.0;
    let mut both_empty = 0;
    for (p, g) in pairs {
        let o = dice_iou(p, g)?;
        dice += o.dice;
        iou += o.iou;
        both_empty += usize::from(o.both_empty);
    }
    let n = pairs.len() as f64;
    Ok(Some(SegmentationSummary {
        n: pairs.len(),
        mdsc: frac4(dice / n),
        miou: frac4(iou / n),
        both_empty,
    }))
}

pub fn summarize_diagnosis(r: &DiagnosticReport) -> DiagnosisSummary {
    DiagnosisSummary {
        n: r.tp + r.tn + r.fp + r.fn_,
        acc: pct(r.acc),
        auc: pct(r.auc),
        sens: pct(r.sensitivity),
        spec: pct(r.specificity),
        precision: pct(r.precision),
        f1: pct(r.f1),
        tp: r.tp,
        tn: r.tn,
        fp: r.fp,
        fn_: r.fn_,
        threshold: r.threshold,
        precision_undefined: r.precision_undefined,
    }
}

/// Per-class seeded shuffle; the first `round(ratio · n_c)` of each class
/// train, clamped so both sides keep a case of every class with ≥ 2 cases.
pub fn stratified_split(labels: &[usize], ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let mut k = (ratio * n as f64).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        }
        train.extend_from_slice(&idx[..k.min(n)]);
        val.extend_from_slice(&idx[k.min(n)..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Feature blocks from the configured weights bundle or seeded random init.
pub fn load_feature_blocks(cfg: &FeatureConfig, channels: usize) -> Result<FeatureBlocks> {
    match &cfg.weights {
        Some(p) => FeatureBlocks::from_tensors(&load_bundle(p)?.tensors, &cfg.dilations),
        None => Ok(FeatureBlocks::random(channels, cfg.se_reduction, &cfg.dilations, cfg.seed)),
    }
}

struct Processed {
    dir_name: String,
    bundle: CaseBundle,
}

fn case_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn process_one(input: &Path, out_cases: &Path, cfg: &PipelineConfig, blocks: &FeatureBlocks) -> Result<Processed> {
    let name = case_name(input);
    let out = out_cases.join(&name);
    let fingerprint = cfg.stage_fingerprint();
    let cached = load_bundle(&out).ok().filter(|b| b.metadata.get(FINGERPRINT_KEY) == Some(&fingerprint));
    let mut bundle = match cached {
        Some(b) => b,
        None => load_bundle(input)?,
    };
    run_case_stages(&mut bundle, &cfg.prompt, &cfg.mcra, blocks, &cfg.pool, &cfg.radiomics)?;
    bundle.metadata.insert(FINGERPRINT_KEY.into(), fingerprint);
    save_bundle(&bundle, &out)?;
    Ok(Processed { dir_name: name, bundle })
}

/// Outcome of [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineSummary {
    pub report: Report,
    pub exit_code: i32,
}

/// Per-case stages over every bundle in `in_dir` (written to
/// `out_dir/cases/`), then the split, selection, head training, fusion and
/// validation report. Case failures are recorded rather than fatal.
pub fn run_pipeline(cfg: &PipelineConfig, in_dir: &Path, out_dir: &Path, workers: usize) -> Result<PipelineSummary> {
    cfg.validate()?;
    let inputs = list_bundles(in_dir)?;
    let cases_dir = out_dir.join("cases");
    std::fs::create_dir_all(&cases_dir).map_err(|e| Error::io(&cases_dir, e))?;
    cfg.save(&out_dir.join("config.json"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(cfg, &inputs, &cases_dir, out_dir))
}

fn run_inner(cfg: &PipelineConfig, inputs: &[PathBuf], cases_dir: &Path, out_dir: &Path) -> Result<PipelineSummary> {
    let mut report = Report { n_cases: inputs.len(), ..Default::default() };
    if inputs.is_empty() {
        std::fs::write(out_dir.join("report.json"), report.to_json()).map_err(|e| Error::io(out_dir, e))?;
        return Ok(PipelineSummary { exit_code: report.exit_code(), report });
    }
    let channels = inputs
        .iter()
        .find_map(|p| load_bundle(p).ok().and_then(|b| b.get("feature_map").map(|t| t.shape()[0])))
        .unwrap_or(1);
    let blocks = load_feature_blocks(&cfg.features, channels)?;

    let results: Vec<std::result::Result<Processed, CaseFailure>> = inputs
        .par_iter()
        .map(|p| {
            process_one(p, cases_dir, cfg, &blocks).map_err(|e| CaseFailure { case: case_name(p), error: e.to_string() })
        })
        .collect();
    let mut done = Vec::new();
    for r in results {
        match r {
            Ok(p) => done.push(p),
            Err(f) => report.failures.push(f),
        }
    }
    report.n_processed = done.len();
    report.n_failed = report.failures.len();
    write_features_csv(&done, cfg, &out_dir.join("features.csv"))?;

    if let Err(e) = dataset_stage(cfg, &mut done, cases_dir, out_dir, &mut report) {
        report.dataset_error = Some(e.to_string());
    }
    std::fs::write(out_dir.join("report.json"), report.to_json()).map_err(|e| Error::io(out_dir, e))?;
    Ok(PipelineSummary { exit_code: report.exit_code(), report })
}

fn radiomics_matrix(cases: &[&Processed], cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let names = cfg.radiomics.feature_names();
    let mut data = Vec::with_capacity(cases.len() * names.len());
    for c in cases {
        let v = c.bundle.require(RADIOMICS)?;
        if v.len() != names.len() {
            return Err(Error::Schema(format!("case `{}` has {} radiomics values", c.bundle.case_id, v.len())));
        }
        data.extend_from_slice(v.data());
    }
    FeatureMatrix::new(
        cases.iter().map(|c| c.bundle.case_id.clone()).collect(),
        names,
        cases.iter().map(|c| label_of(&c.bundle)).collect(),
        data,
    )
}

fn label_of(b: &CaseBundle) -> Option<usize> {
    b.label.and_then(|l| usize::try_from(l).ok()).filter(|&l| l <= 1)
}

fn write_features_csv(done: &[Processed], cfg: &PipelineConfig, path: &Path) -> Result<()> {
    let refs: Vec<&Processed> = done.iter().collect();
    radiomics_matrix(&refs, cfg)?.write_csv(path)
}

fn dataset_stage(
    cfg: &PipelineConfig,
    done: &mut [Processed],
    cases_dir: &Path,
    out_dir: &Path,
    report: &mut Report,
) -> Result<()> {
    let labelled: Vec<usize> = (0..done.len()).filter(|&i| label_of(&done[i].bundle).is_some()).collect();
    let labels: Vec<usize> = labelled.iter().map(|&i| label_of(&done[i].bundle).unwrap()).collect();
    let (tr, va) = stratified_split(&labels, cfg.split_ratio, cfg.seed);
    let train: Vec<usize> = tr.iter().map(|&i| labelled[i]).collect();
    let val: Vec<usize> = va.iter().map(|&i| labelled[i]).collect();
    report.n_train = train.len();
    report.n_val = val.len();

    let seg: Vec<(&Tensor, &Tensor)> = val
        .iter()
        .filter_map(|&i| Some((done[i].bundle.get(PRED_MASK)?, done[i].bundle.get("gt_mask")?)))
        .collect();
    report.segmentation = summarize_segmentation(&seg)?;

    let y_train: Vec<usize> = train.iter().map(|&i| label_of(&done[i].bundle).unwrap()).collect();
    let y_val: Vec<usize> = val.iter().map(|&i| label_of(&done[i].bundle).unwrap()).collect();

    // visual branch
    let pools: Vec<Vec<f64>> = done
        .iter()
        .map(|p| p.bundle.require(POOL_VECTOR).map(|t| t.data().to_vec()))
        .collect::<Result<_>>()?;
    let xs: Vec<Vec<f64>> = train.iter().map(|&i| pools[i].clone()).collect();
    let dim = pools.first().map_or(0, Vec::len);
    let mut head = MlpHead::random(dim, cfg.head.hidden, cfg.seed);
    head.fit_normalization(&xs);
    let (head, _) = train_head(&head, &xs, &y_train, None, &cfg.head)?;
    std::fs::write(out_dir.join("head.json"), serde_json::to_string_pretty(&head)?)
        .map_err(|e| Error::io(out_dir, e))?;
    let y_sam: Vec<[f64; 2]> = pools.iter().map(|x| mlp_forward(x, &head)).collect::<Result<_>>()?;

    // radiomics branch
    let all: Vec<&Processed> = done.iter().collect();
    let matrix = radiomics_matrix(&all, cfg)?;
    let model = fit_selection(&matrix.select_rows(&train), &cfg.selection)?;
    model.save(&out_dir.join("model.json"))?;
    let z = model.decision_function(&matrix)?;
    report.selection = Some(SelectionSummary {
        n_features: model.input_names.len(),
        n_after_variance: model.kept_names.len(),
        mrmr_k: model.mrmr_names.len(),
        n_selected: model.selected_names.len(),
        lambda: model.lambda,
        selected_names: model.selected_names.clone(),
    });
    report.max_abs_cross_correlation = cross_corr(&pools, &model, &matrix)?;

    // fusion
    let mut p_vis = Vec::with_capacity(done.len());
    let mut p_rad = Vec::with_capacity(done.len());
    let mut p_fused = Vec::with_capacity(done.len());
    for i in 0..done.len() {
        let y_rad = [-z[i] / 2.0, z[i] / 2.0];
        let fused = fused_probabilities(&y_sam[i], &y_rad, &cfg.fusion)?;
        p_vis.push(softmax(&y_sam[i])[1]);
        p_rad.push(sigmoid(z[i]));
        p_fused.push(fused[1]);
        let b = &mut done[i].bundle;
        b.insert(FINAL_PROB, Tensor::vector(fused)?.to_storage_precision());
        b.metadata.insert("split".into(), split_of(i, &train, &val).into());
        save_bundle(b, cases_dir.join(&done[i].dir_name))?;
    }
    write_predictions(done, &train, &val, &p_vis, &p_rad, &p_fused, &out_dir.join("predictions.csv"))?;

    let pick = |v: &[f64]| val.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let fused_val = pick(&p_fused);
    let diag = classify_report(&fused_val, &y_val, cfg.threshold)?;
    report.diagnosis = Some(summarize_diagnosis(&diag));
    report.branches = Some(BranchSummary {
        visual_auc: pct(roc_auc(&pick(&p_vis), &y_val)?),
        radiomics_auc: pct(roc_auc(&pick(&p_rad), &y_val)?),
        fused_auc: pct(diag.auc),
    });
    Ok(())
}

fn split_of(i: usize, train: &[usize], val: &[usize]) -> &'static str {
    if train.binary_search(&i).is_ok() {
        "train"
    } else if val.binary_search(&i).is_ok() {
        "val"
    } else {
        "unlabelled"
    }
}

fn cross_corr(pools: &[Vec<f64>], model: &SelectionModel, matrix: &FeatureMatrix) -> Result<Option<f64>> {
    if pools.len() < 3 || model.selected_names.is_empty() {
        return Ok(None);
    }
    let deep: Vec<Vec<f64>> = (0..pools[0].len()).map(|j| pools.iter().map(|p| p[j]).collect()).collect();
    let rad: Vec<Vec<f64>> = model
        .selected_names
        .iter()
        .filter_map(|n| matrix.column_index(n))
        .map(|j| matrix.column(j))
        .collect();
    Ok(Some(frac4(cross_correlation(&deep, &rad)?.max_abs())))
}

#[allow(clippy::too_many_arguments)]
fn write_predictions(
    done: &[Processed],
    train: &[usize],
    val: &[usize],
    p_vis: &[f64],
    p_rad: &[f64],
    p_fused: &[f64],
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "label", "split", "p_visual", "p_radiomics", "p_fused"])?;
    for (i, p) in done.iter().enumerate() {
        w.write_record([
            p.bundle.case_id.clone(),
            label_of(&p.bundle).map(|l| l.to_string()).unwrap_or_default(),
            split_of(i, train, val).to_string(),
            format_real(p_vis[i]),
            format_real(p_rad[i]),
            format_real(p_fused[i]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Report over bundles carrying `pred_mask`/`gt_mask` and `final_prob`/label.
pub fn evaluate_bundles(bundles: &[CaseBundle], threshold: f64) -> Result<Report> {
    let mut report = Report { n_cases: bundles.len(), n_processed: bundles.len(), ..Default::default() };
    let seg: Vec<(&Tensor, &Tensor)> = bundles
        .iter()
        .filter_map(|b| Some((b.get(PRED_MASK)?, b.get("gt_mask")?)))
        .collect();
    report.segmentation = summarize_segmentation(&seg)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for b in bundles {
        if let (Some(p), Some(l)) = (b.get(FINAL_PROB), label_of(b)) {
            let v = p.data();
            scores.push(if v.len() >= 2 { v[1] } else { v[0] });
            labels.push(l);
        }
    }
    if !scores.is_empty() {
        match classify_report(&scores, &labels, threshold) {
            Ok(d) => report.diagnosis = Some(summarize_diagnosis(&d)),
            Err(e) => report.dataset_error = Some(e.to_string()),
        }
    }
    Ok(report)
}

/// Loads and evaluates every bundle under `dir`.
pub fn evaluate_dir(dir: &Path, threshold: f64) -> Result<Report> {
    let mut bundles = Vec::new();
    let mut failures = Vec::new();
    for p in list_bundles(dir)? {
        match load_bundle(&p) {
            Ok(b) => bundles.push(b),
            Err(e) => failures.push(CaseFailure { case: case_name(&p), error: e.to_string() }),
        }
    }
    let mut r = evaluate_bundles(&bundles, threshold)?;
    r.n_cases += failures.len();
    r.n_failed = failures.len();
    r.failures = failures;
    Ok(r)
}

/// Stage outputs grouped per case, for inspection.
pub fn stage_inventory(b: &CaseBundle) -> BTreeMap<&'static str, bool> {
    super::stages::STAGE_OUTPUTS
        .iter()
        .map(|(stage, outs)| (*stage, outs.iter().all(|o| b.get(o).is_some())))
        .collect()
}
