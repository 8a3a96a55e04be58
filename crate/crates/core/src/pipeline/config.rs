use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cam_prompt::PromptConfig;
use crate::error::{Error, Result};
use crate::mcra::McraConfig;
use crate::metrics::FusionConfig;
use crate::neural::DEFAULT_DILATIONS;
use crate::radiomics::RadiomicsConfig;
use crate::region_head::{TrainConfig, POOL_EPS};
use crate::selection::SelectionConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub se_reduction: usize,
    pub dilations: Vec<usize>,
    /// Bundle holding `weights_*` tensors; random init from `seed` if absent.
    pub weights: Option<PathBuf>,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            se_reduction: 4,
            dilations: DEFAULT_DILATIONS.to_vec(),
            weights: None,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub eps: f64,
    /// Pool with `σ(M_fused)` instead of its 0.5-binarization.
    pub soft_mask: bool,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self { eps: POOL_EPS, soft_mask: false }
    }
}

/// Every pipeline setting in one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(rename = "_comments")]
    pub comments: BTreeMap<String, String>,
    pub seed: u64,
    pub split_ratio: f64,
    pub threshold: f64,
    pub prompt: PromptConfig,
    pub mcra: McraConfig,
    pub features: FeatureConfig,
    pub pool: PoolConfig,
    pub head: TrainConfig,
    pub radiomics: RadiomicsConfig,
    pub selection: SelectionConfig,
    pub fusion: FusionConfig,
}

fn default_comments() -> BTreeMap<String, String> {
    [
        ("split_ratio", "stratified train fraction; the rest is the validation split"),
        ("threshold", "decision threshold on the fused malignancy probability"),
        ("prompt", "heatmap thresholds, top_k, IoU suppression and minimum component area"),
        ("mcra", "temperatures, fusion weight alpha, teacher threshold theta (null = 1/K), focusing gamma"),
        ("features", "SE reduction and pyramid dilations; weights bundle or seeded random init"),
        ("pool", "epsilon guard of masked pooling; soft_mask pools with sigmoid probabilities"),
        ("head", "MLP width and full-batch focal-loss training schedule"),
        ("radiomics", "gray levels, LoG sigmas in mm, pixel spacing (null = bundle metadata, then 0.1 mm)"),
        ("selection", "variance threshold, mRMR K and MI bins, LASSO grid, folds and seed"),
        ("fusion", "alpha_ext weight of the radiomics logits; probability_space adds probabilities instead"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            comments: default_comments(),
            seed: 42,
            split_ratio: 0.8,
            threshold: 0.5,
            prompt: PromptConfig::default(),
            mcra: McraConfig::default(),
            features: FeatureConfig::default(),
            pool: PoolConfig::default(),
            head: TrainConfig::default(),
            radiomics: RadiomicsConfig::default(),
            selection: SelectionConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&s).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::invalid("split_ratio must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must lie in [0, 1]"));
        }
        if self.features.se_reduction == 0 || self.features.dilations.is_empty() {
            return Err(Error::invalid("feature blocks need a positive reduction and at least one dilation"));
        }
        if !(self.pool.eps > 0.0) {
            return Err(Error::invalid("pool eps must be positive"));
        }
        self.prompt.validate()?;
        self.mcra.validate()?;
        self.fusion.validate()
    }

    /// Settings that determine the cached per-case stage outputs.
    pub fn stage_fingerprint(&self) -> String {
        serde_json::to_string(&(&self.prompt, &self.mcra, &self.features, &self.pool, &self.radiomics))
            .expect("config serializes")
    }
}
