use lesionkit::radiomics::{canonical_name, extract_all, RadiomicsConfig};
use lesionkit::selection::{
    apply_pipeline, fit_selection, lambda_max, lasso_objective, lasso_solve, FeatureMatrix, LassoConfig, SelectionConfig,
    SelectionModel,
};
use lesionkit::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

fn lesion_case(seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Tensor::new(vec![48, 48], (0..48 * 48).map(|_| rng.random::<f64>()).collect()).unwrap();
    let mask = Tensor::from_fn2(48, 48, |r, c| {
        let (dr, dc) = (r as f64 - 24.0, c as f64 - 22.0);
        if dr * dr / 120.0 + dc * dc / 60.0 <= 1.0 { 1.0 } else { 0.0 }
    })
    .unwrap();
    (image, mask)
}

#[test]
fn full_vector_is_complete_and_finite() {
    let cfg = RadiomicsConfig::default();
    let (image, mask) = lesion_case(1);
    let v = extract_all(&image, &mask, 0.1, &cfg).unwrap();
    assert_eq!(v.len(), 738);
    assert_eq!(v.names, cfg.feature_names());
    assert!(v.values.iter().all(|x| x.is_finite()));
    assert_eq!(v.names.iter().collect::<BTreeSet<_>>().len(), v.len());
    let hh = v.get("wavelet-HH_glcm_Contrast").unwrap();
    assert_eq!(v.get("wavelet-H_glcm_Contrast"), Some(hh));
    assert_eq!(canonical_name("original_glcm_Contrast"), "original_glcm_Contrast");
}

#[test]
fn empty_roi_is_rejected() {
    let (image, _) = lesion_case(2);
    let empty = Tensor::zeros(vec![48, 48]).unwrap();
    let err = extract_all(&image, &empty, 0.1, &RadiomicsConfig::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyMask), "{err}");
}

#[test]
fn spacing_reaches_only_the_log_blocks() {
    let cfg = RadiomicsConfig { wavelet: false, log_sigmas_mm: vec![1.0], ..RadiomicsConfig::default() };
    let (image, mask) = lesion_case(3);
    let a = extract_all(&image, &mask, 0.1, &cfg).unwrap();
    let b = extract_all(&image, &mask, 0.2, &cfg).unwrap();
    let mut log_changed = false;
    for (i, name) in a.names.iter().enumerate() {
        if name.starts_with("original_") {
            assert_eq!(a.values[i], b.values[i], "{name}");
        } else {
            log_changed |= a.values[i] != b.values[i];
        }
    }
    assert!(log_changed);
}

fn separable(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let cols = (0..p)
        .map(|j| {
            y.iter()
                .map(|&l| rng.random_range(-1.0..1.0) + if j < 3 { l as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    (cols, y)
}

#[test]
fn lasso_trace_is_monotone_and_lambda_max_is_sharp() {
    let (cols, y) = separable(4, 60, 10);
    let lmax = lambda_max(&cols, &y).unwrap();
    let cfg = LassoConfig::default();
    for frac in [0.5, 0.1, 0.01] {
        let s = lasso_solve(&cols, &y, frac * lmax, &cfg, true).unwrap();
        for pair in s.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{pair:?}");
        }
        let last = lasso_objective(&cols, &y, &s.w, s.intercept, frac * lmax);
        assert!((last - s.objective_trace.last().unwrap()).abs() < 1e-9);
    }
    let at_max = lasso_solve(&cols, &y, lmax, &cfg, false).unwrap();
    assert!(at_max.w.iter().all(|&w| w == 0.0));
    let below = lasso_solve(&cols, &y, 0.95 * lmax, &cfg, false).unwrap();
    assert!(below.w.iter().any(|&w| w != 0.0));
}

fn matrix(seed: u64, n: usize, p: usize) -> FeatureMatrix {
    let (cols, y) = separable(seed, n, p);
    FeatureMatrix::from_columns((0..p).map(|j| format!("f{j}")).collect(), &cols, &y).unwrap()
}

#[test]
fn cascade_drops_constants_and_survives_serialization() {
    let mut m = matrix(5, 80, 12);
    let n = m.n_rows();
    let mut cols = m.columns();
    cols.push(vec![3.0; n]);
    let mut names = m.names.clone();
    names.push("constant".into());
    let y: Vec<usize> = m.labels.iter().map(|l| l.unwrap()).collect();
    m = FeatureMatrix::from_columns(names, &cols, &y).unwrap();

    let model = fit_selection(&m, &SelectionConfig::default()).unwrap();
    assert!(!model.kept_names.contains(&"constant".to_string()));
    assert!(model.mrmr_names.len() <= model.kept_names.len());
    assert!(!model.selected_names.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = SelectionModel::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.decision_function(&m).unwrap(), model.decision_function(&m).unwrap());
}

#[test]
fn missing_column_is_a_schema_error() {
    let m = matrix(6, 40, 6);
    let model = fit_selection(&m, &SelectionConfig::default()).unwrap();
    let cols = m.columns();
    let y: Vec<usize> = m.labels.iter().map(|l| l.unwrap()).collect();
    let names: Vec<String> = (0..cols.len()).map(|j| format!("g{j}")).collect();
    let renamed = FeatureMatrix::from_columns(names, &cols, &y).unwrap();
    assert!(matches!(apply_pipeline(&model, &renamed), Err(Error::Schema(_))));
}

#[test]
fn single_class_training_is_rejected() {
    let (cols, _) = separable(7, 20, 4);
    let m = FeatureMatrix::from_columns((0..4).map(|j| format!("f{j}")).collect(), &cols, &[1; 20]).unwrap();
    assert!(fit_selection(&m, &SelectionConfig::default()).is_err());
}
