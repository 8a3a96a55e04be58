//! Three-stage radiomics cascade: variance filter and z-score, mRMR ranking,
//! then L1 logistic regression. Every statistic is fitted on training rows
//! only and frozen in a [`SelectionModel`].

mod lasso;
mod matrix;
mod mrmr;
mod stats;

pub use lasso::{
    kkt_violation, lambda_grid, lambda_max, lasso_fit, lasso_objective, lasso_solve, logistic_gradient, stratified_folds,
    LassoConfig, LassoFit, LassoSolution,
};
pub use matrix::{format_real, FeatureMatrix};
pub use mrmr::mrmr_select;
pub use stats::{equal_width_bins, mutual_information, variance_filter, zscore, zscore_apply, zscore_fit, zscore_fit_apply};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub variance_tau: f64,
    /// Columns kept by mRMR; clamped to the columns surviving the variance
    /// filter.
    pub mrmr_k: usize,
    pub mi_bins: usize,
    pub lasso: LassoConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            variance_tau: 1e-8,
            mrmr_k: 128,
            mi_bins: 16,
            lasso: LassoConfig::default(),
        }
    }
}

/// Frozen cascade parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionModel {
    pub input_names: Vec<String>,
    pub variance_tau: f64,
    pub variance_keep: Vec<bool>,
    /// Names surviving the variance filter; `mu_train`/`sigma_train` align.
    pub kept_names: Vec<String>,
    pub mu_train: Vec<f64>,
    pub sigma_train: Vec<f64>,
    /// Indices into `kept_names`, in selection order.
    pub mrmr_indices: Vec<usize>,
    pub mrmr_names: Vec<String>,
    /// Aligned with `mrmr_names`.
    pub lasso_weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub lambda_max: f64,
    pub kkt_violation: f64,
    /// Columns with a non-zero LASSO weight, in mRMR order.
    pub selected_names: Vec<String>,
    pub selected_weights: Vec<f64>,
}

impl SelectionModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// Linear score of one reduced row (columns in `selected_names` order).
    pub fn decision(&self, reduced_row: &[f64]) -> f64 {
        self.intercept + reduced_row.iter().zip(&self.selected_weights).map(|(x, w)| x * w).sum::<f64>()
    }

    /// Linear scores of every row of `x`.
    pub fn decision_function(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let r = apply_pipeline(self, x)?;
        Ok((0..r.n_rows()).map(|i| self.decision(r.row(i))).collect())
    }
}

/// Fits the cascade on a labelled training matrix.
pub fn fit_selection(train: &FeatureMatrix, cfg: &SelectionConfig) -> Result<SelectionModel> {
    let y = train.require_labels()?;
    if y.len() < 4 {
        return Err(Error::invalid("at least four training cases are required"));
    }
    stats::check_two_classes(&y)?;
    let cols = train.columns();
    let keep = variance_filter(&cols, cfg.variance_tau)?;
    let kept: Vec<usize> = (0..cols.len()).filter(|&j| keep[j]).collect();
    if kept.is_empty() {
        return Err(Error::invalid("no feature survives the variance filter"));
    }
    let kept_cols: Vec<Vec<f64>> = kept.iter().map(|&j| cols[j].clone()).collect();
    let (mu, sigma) = zscore_fit(&kept_cols)?;
    let z = zscore_apply(&kept_cols, &mu, &sigma);
    let k = cfg.mrmr_k.min(kept.len());
    let order = mrmr_select(&z, &y, k, cfg.mi_bins)?;
    let zk: Vec<Vec<f64>> = order.iter().map(|&j| z[j].clone()).collect();
    let fit = lasso_fit(&zk, &y, &cfg.lasso)?;
    let kept_names: Vec<String> = kept.iter().map(|&j| train.names[j].clone()).collect();
    let mrmr_names: Vec<String> = order.iter().map(|&j| kept_names[j].clone()).collect();
    let (selected_names, selected_weights) = mrmr_names
        .iter()
        .zip(&fit.w)
        .filter(|(_, &w)| w != 0.0)
        .map(|(n, &w)| (n.clone(), w))
        .unzip();
    Ok(SelectionModel {
        input_names: train.names.clone(),
        variance_tau: cfg.variance_tau,
        variance_keep: keep,
        kept_names,
        mu_train: mu,
        sigma_train: sigma,
        mrmr_indices: order,
        mrmr_names,
        lasso_weights: fit.w,
        intercept: fit.intercept,
        lambda: fit.lambda,
        lambda_max: fit.lambda_max,
        kkt_violation: fit.kkt_violation,
        selected_names,
        selected_weights,
    })
}

/// Standardized values of the selected columns, looked up by name.
pub fn apply_pipeline(model: &SelectionModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut src = Vec::with_capacity(model.selected_names.len());
    for name in &model.selected_names {
        let j = x
            .column_index(name)
            .ok_or_else(|| Error::Schema(format!("feature `{name}` missing from input")))?;
        let k = model
            .kept_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("feature `{name}` absent from the fitted schema")))?;
        src.push((j, model.mu_train[k], model.sigma_train[k]));
    }
    let mut data = Vec::with_capacity(x.n_rows() * src.len());
    for i in 0..x.n_rows() {
        let row = x.row(i);
        data.extend(src.iter().map(|&(j, m, s)| zscore(row[j], m, s)));
    }
    FeatureMatrix::new(x.case_ids.clone(), model.selected_names.clone(), x.labels.clone(), data)
}
