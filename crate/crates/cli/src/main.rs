use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lesionkit::bundle::{load_bundle, resolve_bundles, save_bundle, CaseBundle};
use lesionkit::cam_prompt::Connectivity;
use lesionkit::losses::{bce_dice_loss, focal_loss, stage1_loss, text_aux_loss, FocalConfig, Stage1Weights, TEXT_TEMPERATURE};
use lesionkit::mcra::{ConsReduction, FusionSpace};
use lesionkit::pipeline::{
    self, load_feature_blocks, radiomics_of, run_aggregate, run_pipeline, run_pool, run_prompt, synth_dataset,
    tensor_to_boxes, LesionShape, PipelineConfig, SyntheticSpec, CANDIDATE_BOXES, FEATURE_FUSED, FUSED_MASK,
    POOL_VECTOR, PRED_MASK,
};
use lesionkit::region_head::{mlp_forward, train_head, MlpHead};
use lesionkit::selection::{apply_pipeline, fit_selection, FeatureMatrix, SelectionModel};
use lesionkit::Tensor;

#[derive(Parser)]
#[command(name = "lesionkit", version, about = "Lesion evidence pipeline over case bundles")]
struct Cli {
    /// Pipeline configuration JSON; defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for case-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output path of the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Ellipse,
    Blob,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConnArg {
    Four,
    Eight,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Logit,
    Probability,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Sum,
    Mean,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset of case bundles.
    Synth(SynthArgs),
    /// Candidate boxes from a bundle's heatmap.
    Prompt(PromptArgs),
    /// Multi-candidate aggregation; fused tensors are appended to the bundle.
    Aggregate(AggregateArgs),
    /// SE, pyramid and gate blocks over `feature_map`.
    Features(FeaturesArgs),
    /// Mask-guided multi-pooling of `feature_fused`.
    Pool(PoolArgs),
    /// Radiomics feature table over a directory of bundles.
    Radiomics(RadiomicsArgs),
    /// Fit the variance, mRMR and LASSO cascade on a training table.
    Select(SelectArgs),
    /// Reduce a feature table with a fitted selection model.
    Apply(ApplyArgs),
    /// Train the diagnostic MLP head on pooled vectors.
    TrainHead(TrainHeadArgs),
    /// Stage-one loss terms of one bundle or a directory of bundles.
    Loss(LossArgs),
    /// Segmentation and diagnostic metrics over processed bundles.
    Eval(EvalArgs),
    /// Every stage end to end, with the validation report.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
    #[arg(long, value_enum, default_value_t = ShapeArg::Mixed)]
    shape: ShapeArg,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    iou: Option<f64>,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long, value_enum)]
    connectivity: Option<ConnArg>,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    tau_sal: Option<f64>,
    #[arg(long)]
    tau_sem: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    #[arg(long, value_enum)]
    cons_reduction: Option<ReductionArg>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Bundle of `weights_*` tensors.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct PoolArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    soft_mask: bool,
}

#[derive(Args)]
struct RadiomicsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    spacing_mm: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    /// ROI tensor; defaults to `pred_mask`, then `gt_mask`.
    #[arg(long)]
    mask: Option<String>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct TrainHeadArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    lambda_cls: Option<f64>,
    #[arg(long)]
    lambda_loc: Option<f64>,
    #[arg(long)]
    lambda_text: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

struct Ctx {
    cfg: PipelineConfig,
    workers: usize,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

impl Ctx {
    fn out(&self, what: &str) -> Result<&Path> {
        self.out.as_deref().with_context(|| format!("--out is required for {what}"))
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn emit(ctx: &Ctx, v: serde_json::Value) -> Result<()> {
    match &ctx.out {
        Some(p) => write_json(p, &v),
        None => {
            println!("{}", serde_json::to_string_pretty(&v)?);
            Ok(())
        }
    }
}

/// Saves to `--out` when given, otherwise back in place.
fn store(ctx: &Ctx, bundle: &CaseBundle, input: &Path) -> Result<()> {
    let dest = ctx.out.as_deref().unwrap_or(input);
    save_bundle(bundle, dest).with_context(|| format!("saving {}", dest.display()))
}

fn ensure_boxes(b: &mut CaseBundle, cfg: &PipelineConfig) -> Result<Vec<lesionkit::cam_prompt::CandidateBox>> {
    Ok(match b.get(CANDIDATE_BOXES) {
        Some(t) => tensor_to_boxes(t)?,
        None => run_prompt(b, &cfg.prompt)?,
    })
}

fn ensure_aggregated(b: &mut CaseBundle, cfg: &PipelineConfig) -> Result<()> {
    if b.get(FUSED_MASK).is_none() || b.get(PRED_MASK).is_none() {
        let boxes = ensure_boxes(b, cfg)?;
        run_aggregate(b, &boxes, &cfg.mcra)?;
    }
    Ok(())
}

fn pooled_dataset(dir: &Path, cfg: &PipelineConfig) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut blocks: Option<lesionkit::neural::FeatureBlocks> = None;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for p in resolve_bundles(dir)? {
        let mut b = load_bundle(&p)?;
        let Some(y) = b.label.and_then(|l| usize::try_from(l).ok()) else { continue };
        if b.get(POOL_VECTOR).is_none() {
            ensure_aggregated(&mut b, cfg)?;
            if b.get(FEATURE_FUSED).is_none() {
                let c = b.require("feature_map")?.shape()[0];
                let fb = match &blocks {
                    Some(fb) => fb,
                    None => blocks.insert(load_feature_blocks(&cfg.features, c)?),
                };
                pipeline::run_features(&mut b, fb)?;
            }
            run_pool(&mut b, &cfg.pool)?;
        }
        xs.push(b.require(POOL_VECTOR)?.data().to_vec());
        ys.push(y);
    }
    Ok((xs, ys))
}

fn cmd_synth(ctx: &Ctx, a: &SynthArgs) -> Result<i32> {
    let spec = SyntheticSpec {
        n_cases: a.n,
        size: a.size,
        noise: a.noise,
        texture_contrast: a.contrast,
        shape: match a.shape {
            ShapeArg::Ellipse => LesionShape::Ellipse,
            ShapeArg::Blob => LesionShape::Blob,
            ShapeArg::Mixed => LesionShape::Mixed,
        },
        prompt: ctx.cfg.prompt.clone(),
        seed: ctx.seed.unwrap_or(42),
        ..Default::default()
    };
    let out = ctx.out("synth")?;
    let paths = synth_dataset(&spec, out)?;
    eprintln!("wrote {} bundles to {}", paths.len(), out.display());
    Ok(0)
}

fn cmd_prompt(ctx: &Ctx, a: &PromptArgs) -> Result<i32> {
    let mut cfg = ctx.cfg.prompt.clone();
    if let Some(t) = &a.thresholds {
        cfg.thresholds = t.clone();
    }
    if let Some(k) = a.topk {
        cfg.top_k = k;
    }
    if let Some(v) = a.iou {
        cfg.iou_dedup = v;
    }
    if let Some(v) = a.min_area {
        cfg.min_area = v;
    }
    if let Some(c) = a.connectivity {
        cfg.connectivity = match c {
            ConnArg::Four => Connectivity::Four,
            ConnArg::Eight => Connectivity::Eight,
        };
    }
    let mut b = load_bundle(&a.input)?;
    let boxes = run_prompt(&mut b, &cfg)?;
    emit(ctx, serde_json::to_value(&boxes)?)?;
    Ok(0)
}

fn cmd_aggregate(ctx: &Ctx, a: &AggregateArgs) -> Result<i32> {
    let mut cfg = ctx.cfg.mcra.clone();
    if let Some(v) = a.tau_sal {
        cfg.tau_sal = v;
    }
    if let Some(v) = a.tau_sem {
        cfg.tau_sem = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if a.theta.is_some() {
        cfg.theta = a.theta;
    }
    if let Some(v) = a.gamma {
        cfg.gamma = v;
    }
    if let Some(f) = a.fusion {
        cfg.fusion = match f {
            FusionArg::Logit => FusionSpace::Logit,
            FusionArg::Probability => FusionSpace::Probability,
        };
    }
    if let Some(r) = a.cons_reduction {
        cfg.reduction = match r {
            ReductionArg::Sum => ConsReduction::Sum,
            ReductionArg::Mean => ConsReduction::Mean,
        };
    }
    let mut b = load_bundle(&a.input)?;
    let boxes = ensure_boxes(&mut b, &ctx.cfg)?;
    let agg = run_aggregate(&mut b, &boxes, &cfg)?;
    save_bundle(&b, &a.input)?;
    let r = &agg.result;
    emit(
        ctx,
        json!({
            "case_id": b.case_id,
            "w_sal": r.w_sal,
            "w_sem": r.w_sem,
            "w_final": r.w_final,
            "high_set": r.high_set,
            "low_set": r.low_set,
            "promoted_argmax": r.promoted_argmax,
            "zero_norm": r.zero_norm,
            "consistency_loss": r.consistency_loss,
            "fused_box": [agg.fused_box.r0, agg.fused_box.c0, agg.fused_box.r1, agg.fused_box.c1],
        }),
    )?;
    Ok(0)
}

fn cmd_features(ctx: &Ctx, a: &FeaturesArgs) -> Result<i32> {
    let mut b = load_bundle(&a.input)?;
    let mut fc = ctx.cfg.features.clone();
    if a.weights.is_some() {
        fc.weights = a.weights.clone();
    }
    let c = b.require("feature_map")?.shape()[0];
    let blocks = load_feature_blocks(&fc, c)?;
    pipeline::run_features(&mut b, &blocks)?;
    store(ctx, &b, &a.input)?;
    Ok(0)
}

fn cmd_pool(ctx: &Ctx, a: &PoolArgs) -> Result<i32> {
    let mut b = load_bundle(&a.input)?;
    let mut pc = ctx.cfg.pool.clone();
    pc.soft_mask |= a.soft_mask;
    ensure_aggregated(&mut b, &ctx.cfg)?;
    if b.get(FEATURE_FUSED).is_none() {
        bail!("`{FEATURE_FUSED}` missing; run `features` first");
    }
    run_pool(&mut b, &pc)?;
    store(ctx, &b, &a.input)?;
    Ok(0)
}

fn cmd_radiomics(ctx: &Ctx, a: &RadiomicsArgs) -> Result<i32> {
    let mut rc = ctx.cfg.radiomics.clone();
    if a.spacing_mm.is_some() {
        rc.spacing_mm = a.spacing_mm;
    }
    if let Some(b) = a.bins {
        rc.n_levels = b;
    }
    let paths = resolve_bundles(&a.input)?;
    let rows: Vec<Result<(CaseBundle, Vec<f64>)>> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(ctx.workers.max(1)).build()?;
        pool.install(|| {
            paths
                .par_iter()
                .map(|p| {
                    let b = load_bundle(p)?;
                    let mask = match &a.mask {
                        Some(m) => m.clone(),
                        None if b.get(PRED_MASK).is_some() => PRED_MASK.to_string(),
                        None => "gt_mask".to_string(),
                    };
                    let v = radiomics_of(&b, &mask, &rc).with_context(|| format!("case `{}`", b.case_id))?;
                    Ok((b, v.values))
                })
                .collect()
        })
    };
    let mut failed = 0;
    let (mut ids, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new());
    for r in rows {
        match r {
            Ok((b, v)) => {
                ids.push(b.case_id.clone());
                labels.push(b.label.and_then(|l| usize::try_from(l).ok()));
                data.extend(v);
            }
            Err(e) => {
                failed += 1;
                eprintln!("skipped: {e:#}");
            }
        }
    }
    let m = FeatureMatrix::new(ids, rc.feature_names(), labels, data)?;
    m.write_csv(ctx.out("radiomics")?)?;
    Ok(if failed > 0 || paths.is_empty() { 2 } else { 0 })
}

fn cmd_select(ctx: &Ctx, a: &SelectArgs) -> Result<i32> {
    let mut sc = ctx.cfg.selection.clone();
    if let Some(k) = a.k {
        sc.mrmr_k = k;
    }
    if let Some(f) = a.folds {
        sc.lasso.folds = f;
    }
    let m = FeatureMatrix::read_csv(&a.train)?;
    let model = fit_selection(&m, &sc)?;
    model.save(ctx.out("select")?)?;
    eprintln!(
        "{} features → {} after variance → {} by mRMR → {} selected (λ = {:.4e})",
        model.input_names.len(),
        model.kept_names.len(),
        model.mrmr_names.len(),
        model.selected_names.len(),
        model.lambda
    );
    Ok(0)
}

fn cmd_apply(ctx: &Ctx, a: &ApplyArgs) -> Result<i32> {
    let model = SelectionModel::load(&a.model)?;
    let m = FeatureMatrix::read_csv(&a.input)?;
    apply_pipeline(&model, &m)?.write_csv(ctx.out("apply")?)?;
    Ok(0)
}

fn accuracy(head: &MlpHead, xs: &[Vec<f64>], ys: &[usize]) -> Result<f64> {
    let mut hit = 0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = mlp_forward(x, head)?;
        hit += usize::from(usize::from(z[1] > z[0]) == y);
    }
    Ok(hit as f64 / xs.len().max(1) as f64)
}

fn cmd_train_head(ctx: &Ctx, a: &TrainHeadArgs) -> Result<i32> {
    let mut tc = ctx.cfg.head.clone();
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(lr) = a.lr {
        tc.lr = lr;
    }
    let (xs, ys) = pooled_dataset(&a.train, &ctx.cfg)?;
    if xs.is_empty() {
        bail!("no labelled training bundles in {}", a.train.display());
    }
    let mut head = MlpHead::random(xs[0].len(), tc.hidden, ctx.cfg.seed);
    head.fit_normalization(&xs);
    let (head, history) = train_head(&head, &xs, &ys, None, &tc)?;
    std::fs::write(ctx.out("train-head")?, serde_json::to_string_pretty(&head)?)?;
    let mut summary = json!({
        "train_accuracy": accuracy(&head, &xs, &ys)?,
        "final_loss": history.last(),
    });
    if let Some(v) = &a.val {
        let (vx, vy) = pooled_dataset(v, &ctx.cfg)?;
        summary["val_accuracy"] = json!(accuracy(&head, &vx, &vy)?);
    }
    eprintln!("{}", serde_json::to_string(&summary)?);
    Ok(0)
}

fn cmd_loss(ctx: &Ctx, a: &LossArgs) -> Result<i32> {
    let d = Stage1Weights::default();
    let w = Stage1Weights::new(
        a.lambda_cls.unwrap_or(d.lambda_cls),
        a.lambda_loc.unwrap_or(d.lambda_loc),
        a.lambda_text.unwrap_or(d.lambda_text),
    )?;
    let mut cls_rows = Vec::new();
    let mut labels = Vec::new();
    let mut loc = 0.0;
    let mut n_loc = 0usize;
    let (mut region, mut text) = (Vec::new(), Vec::new());
    let mut dim = 0;
    let mut n = 0;
    for p in resolve_bundles(&a.input)? {
        let mut b = load_bundle(&p)?;
        ensure_aggregated(&mut b, &ctx.cfg)?;
        n += 1;
        if let Some(y) = b.label.and_then(|l| usize::try_from(l).ok()) {
            let z = b.require(pipeline::FUSED_CLS)?;
            if z.len() != 2 {
                bail!("case `{}`: expected two class logits", b.case_id);
            }
            cls_rows.extend_from_slice(z.data());
            labels.push(y);
        }
        if let Some(gt) = b.get("gt_mask") {
            loc += bce_dice_loss(b.require(FUSED_MASK)?, gt, 1.0, 1.0)?;
            n_loc += 1;
        }
        let desc = b.get("description_embedding").or(b.get("text_embedding")).cloned();
        if let Some(t) = desc {
            let r = b.require(pipeline::FUSED_EMBEDDING)?;
            dim = r.len();
            region.extend_from_slice(r.data());
            text.extend_from_slice(t.data());
        }
    }
    if n == 0 {
        bail!("no bundles under {}", a.input.display());
    }
    let l_cls = if labels.is_empty() {
        0.0
    } else {
        let cfg = FocalConfig::balanced(&labels, 2.0).unwrap_or_default();
        focal_loss(&Tensor::new(vec![labels.len(), 2], cls_rows)?, &labels, &cfg)?
    };
    let l_loc = if n_loc > 0 { loc / n_loc as f64 } else { 0.0 };
    let rows = if dim > 0 { region.len() / dim } else { 0 };
    let l_text = if rows > 0 {
        text_aux_loss(
            &Tensor::new(vec![rows, dim], region)?,
            &Tensor::new(vec![rows, dim], text)?,
            TEXT_TEMPERATURE,
        )?
    } else {
        0.0
    };
    let total = stage1_loss(l_cls, l_loc, l_text, &w)?;
    emit(
        ctx,
        json!({
            "n_cases": n,
            "cls": l_cls,
            "loc": l_loc,
            "text": l_text,
            "weights": w,
            "total": total,
        }),
    )?;
    Ok(0)
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<i32> {
    let r = pipeline::evaluate_dir(&a.pred, a.threshold.unwrap_or(ctx.cfg.threshold))?;
    let text = r.to_json();
    match &ctx.out {
        Some(p) => std::fs::write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(r.exit_code())
}

fn cmd_pipeline(ctx: &Ctx, a: &PipelineArgs) -> Result<i32> {
    let out = ctx.out("pipeline")?;
    let summary = run_pipeline(&ctx.cfg, &a.input, out, ctx.workers)?;
    let r = &summary.report;
    if let (Some(s), Some(d)) = (&r.segmentation, &r.diagnosis) {
        eprintln!("val mDSC {:.4}  mIoU {:.4}  ACC {:.2}  AUC {:.2}", s.mdsc, s.miou, d.acc, d.auc);
    }
    for f in &r.failures {
        eprintln!("failed {}: {}", f.case, f.error);
    }
    if let Some(e) = &r.dataset_error {
        eprintln!("dataset stage: {e}");
    }
    Ok(summary.exit_code)
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.selection.lasso.seed = s;
    }
    let ctx = Ctx { cfg, workers: cli.workers, out: cli.out, seed: cli.seed };
    match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Prompt(a) => cmd_prompt(&ctx, a),
        Command::Aggregate(a) => cmd_aggregate(&ctx, a),
        Command::Features(a) => cmd_features(&ctx, a),
        Command::Pool(a) => cmd_pool(&ctx, a),
        Command::Radiomics(a) => cmd_radiomics(&ctx, a),
        Command::Select(a) => cmd_select(&ctx, a),
        Command::Apply(a) => cmd_apply(&ctx, a),
        Command::TrainHead(a) => cmd_train_head(&ctx, a),
        Command::Loss(a) => cmd_loss(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Pipeline(a) => cmd_pipeline(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
