//! End-to-end orchestration: per-case stages cached in bundles, then the
//! dataset-level split, selection, head training, fusion and report.

mod config;
mod run;
mod stages;
mod synth;

pub use config::{FeatureConfig, PipelineConfig, PoolConfig};
pub use run::{
    evaluate_bundles, evaluate_dir, load_feature_blocks, pct, run_pipeline, stage_inventory, stratified_split,
    summarize_diagnosis, summarize_segmentation, BranchSummary, CaseFailure, DiagnosisSummary, PipelineSummary, Report,
    SegmentationSummary, SelectionSummary, EXIT_FATAL, EXIT_OK, EXIT_PARTIAL,
};
pub use stages::{
    boxes_to_tensor, candidate_predictions, fused_box, invalidate_after, load_fused_box, radiomics_of, resize_mask,
    resolve_spacing, run_aggregate, run_case_stages, run_features, run_pool, run_prompt, run_radiomics,
    tensor_to_boxes, AggregateOutputs, CANDIDATE_BOXES, FEATURE_FUSED, FINAL_PROB, FUSED_BOX, FUSED_CLS,
    FUSED_EMBEDDING, FUSED_MASK, MCRA_WEIGHTS, POOL_VECTOR, PRED_MASK, RADIOMICS, STAGE_OUTPUTS,
};
pub use synth::{synth_case, synth_dataset, synth_labels, LesionShape, SyntheticSpec};
