//! On-disk case bundles: a `manifest.json` plus one raw little-endian
//! float32 `.bin` file per tensor, row-major.
//!
//! Reserved tensor names used by the pipeline stages:
//!
//! | name                | shape     | meaning                                  |
//! |---------------------|-----------|------------------------------------------|
//! | `image`             | `[H, W]`  | grayscale image in `[0, 1]`              |
//! | `heatmap`           | `[H, W]`  | activation heatmap in `[0, 1]`           |
//! | `text_embedding`    | `[D]`     | fixed inference-prompt text embedding    |
//! | `feature_map`       | `[C,h,w]` | visual encoder features                  |
//! | `gt_mask`           | `[H, W]`  | ground-truth lesion mask in `{0, 1}`     |
//! | `mask_logits_k`     | `[H, W]`  | candidate `k` mask logits                |
//! | `cls_logits_k`      | `[Ccls]`  | candidate `k` classification logits      |
//! | `embedding_k`       | `[D]`     | candidate `k` region embedding           |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

/// One case: named tensors, an optional class label and free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CaseBundle {
    pub case_id: String,
    pub label: Option<i64>,
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl CaseBundle {
    pub fn new(case_id: impl Into<String>) -> Self {
        Self {
            case_id: case_id.into(),
            ..Default::default()
        }
    }

    pub fn with_label(mut self, label: i64) -> Self {
        self.label = Some(label);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Number of candidates `k = 0..K-1` with a `mask_logits_k` tensor.
    pub fn candidate_count(&self) -> usize {
        (0..)
            .take_while(|k| self.tensors.contains_key(&format!("mask_logits_{k}")))
            .count()
    }

    /// Checks that `image`, `heatmap` and `gt_mask` (whichever are present)
    /// share one spatial shape, along with every per-candidate mask.
    pub fn validate_spatial(&self) -> Result<()> {
        let mut reference: Option<(String, &[usize])> = None;
        let k = self.candidate_count();
        let names = ["image", "heatmap", "gt_mask"]
            .into_iter()
            .map(String::from)
            .chain((0..k).map(|i| format!("mask_logits_{i}")));
        for name in names {
            if let Some(t) = self.tensors.get(&name) {
                if t.ndim() != 2 {
                    return Err(Error::shape(format!("`{name}` must be [H, W], got {:?}", t.shape())));
                }
                match &reference {
                    None => reference = Some((name, t.shape())),
                    Some((rname, rshape)) if *rshape != t.shape() => {
                        return Err(Error::shape(format!(
                            "`{name}` has shape {:?} but `{rname}` has {rshape:?}",
                            t.shape()
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    case_id: String,
    label: Option<i64>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    file: String,
    byte_order: String,
    layout: String,
}

fn valid_tensor_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && !name.starts_with('.')
}

/// Reads and validates a bundle directory.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<CaseBundle> {
    let dir = path.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let bad = |message: String| Error::Manifest {
        path: manifest_path.clone(),
        message,
    };

    let mut tensors = BTreeMap::new();
    for entry in manifest.tensors {
        if entry.dtype != "f32" {
            return Err(bad(format!("tensor `{}`: unsupported dtype `{}`", entry.name, entry.dtype)));
        }
        if entry.byte_order != "little" {
            return Err(bad(format!("tensor `{}`: unsupported byte order `{}`", entry.name, entry.byte_order)));
        }
        if entry.layout != "row-major" {
            return Err(bad(format!("tensor `{}`: unsupported layout `{}`", entry.name, entry.layout)));
        }
        if entry.file.contains('/') || entry.file.contains('\\') || entry.file.starts_with('.') {
            return Err(bad(format!("tensor `{}`: file name `{}` escapes the bundle", entry.name, entry.file)));
        }
        if entry.shape.is_empty() || entry.shape.contains(&0) {
            return Err(bad(format!("tensor `{}`: invalid shape {:?}", entry.name, entry.shape)));
        }
        let bin_path = dir.join(&entry.file);
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let count: usize = entry.shape.iter().product();
        if bytes.len() != count * 4 {
            return Err(Error::ByteCount {
                tensor: entry.name,
                expected: count * 4,
                actual: bytes.len(),
            });
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: entry.name,
                index,
            });
        }
        if tensors.contains_key(&entry.name) {
            return Err(bad(format!("duplicate tensor `{}`", entry.name)));
        }
        tensors.insert(entry.name, Tensor::new(entry.shape, data)?);
    }

    let bundle = CaseBundle {
        case_id: manifest.case_id,
        label: manifest.label,
        tensors,
        metadata: manifest.metadata,
    };
    bundle.validate_spatial()?;
    Ok(bundle)
}

/// Writes a bundle directory; the output is a pure function of the bundle.
pub fn save_bundle(bundle: &CaseBundle, path: impl AsRef<Path>) -> Result<()> {
    let dir = path.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut entries = Vec::with_capacity(bundle.tensors.len());
    for (name, tensor) in &bundle.tensors {
        if !valid_tensor_name(name) {
            return Err(Error::invalid(format!("tensor name `{name}` is not file-safe")));
        }
        if let Some(index) = tensor.first_non_finite() {
            return Err(Error::NonFinite {
                tensor: name.clone(),
                index,
            });
        }
        let file = format!("{name}.bin");
        let mut bytes = Vec::with_capacity(tensor.len() * 4);
        for &v in tensor.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let bin_path = dir.join(&file);
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            dtype: "f32".into(),
            file,
            byte_order: "little".into(),
            layout: "row-major".into(),
        });
    }

    let manifest = Manifest {
        case_id: bundle.case_id.clone(),
        label: bundle.label,
        tensors: entries,
        metadata: bundle.metadata.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

/// Bundle directories directly under `dir`, sorted by path.
pub fn list_bundles(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() && p.join(MANIFEST_FILE).is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// `path` itself when it is a bundle, otherwise the bundles inside it.
pub fn resolve_bundles(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    if path.join(MANIFEST_FILE).is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        list_bundles(path)
    }
}
