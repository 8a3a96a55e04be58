use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Cases × named features, row-major, with optional binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub case_ids: Vec<String>,
    pub names: Vec<String>,
    pub labels: Vec<Option<usize>>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(case_ids: Vec<String>, names: Vec<String>, labels: Vec<Option<usize>>, data: Vec<f64>) -> Result<Self> {
        let (n, p) = (case_ids.len(), names.len());
        if labels.len() != n || data.len() != n * p {
            return Err(Error::shape(format!(
                "{n} cases × {p} features needs {} values and {n} labels, got {} and {}",
                n * p,
                data.len(),
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Schema(format!("duplicate feature name `{dup}`")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value for case `{}`, feature `{}`",
                case_ids[i / p.max(1)],
                names[i % p.max(1)]
            )));
        }
        if labels.iter().flatten().any(|&y| y > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(Self { case_ids, names, labels, data })
    }

    /// Builds a labelled matrix from per-column vectors.
    pub fn from_columns(names: Vec<String>, cols: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let n = labels.len();
        if cols.len() != names.len() || cols.iter().any(|c| c.len() != n) {
            return Err(Error::shape("columns disagree with names or labels"));
        }
        let mut data = Vec::with_capacity(n * cols.len());
        for i in 0..n {
            data.extend(cols.iter().map(|c| c[i]));
        }
        let ids = (0..n).map(|i| format!("case_{i:04}")).collect();
        Self::new(ids, names, labels.iter().map(|&y| Some(y)).collect(), data)
    }

    pub fn n_rows(&self) -> usize {
        self.case_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.data[i * self.n_cols() + j]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_cols()).map(|j| self.column(j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Labels of every row; fails if any is missing.
    pub fn require_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .zip(&self.case_ids)
            .map(|(l, id)| l.ok_or_else(|| Error::invalid(format!("case `{id}` has no label"))))
            .collect()
    }

    /// Rows at `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            case_ids: idx.iter().map(|&i| self.case_ids[i].clone()).collect(),
            names: self.names.clone(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            data,
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "case_id" || &header[1] != "label" {
            return Err(Error::Schema(format!("{}: header must start with case_id,label", path.display())));
        }
        let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let (mut ids, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Schema(format!("row with {} fields, header has {}", rec.len(), header.len())));
            }
            ids.push(rec[0].to_string());
            labels.push(match rec[1].trim() {
                "" => None,
                s => Some(s.parse::<usize>().map_err(|_| Error::Schema(format!("bad label `{s}`")))?),
            });
            for f in rec.iter().skip(2) {
                data.push(f.trim().parse::<f64>().map_err(|_| Error::Schema(format!("bad number `{f}`")))?);
            }
        }
        Self::new(ids, names, labels, data)
    }

    /// Header `case_id,label,<names>`; reals with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["case_id".to_string(), "label".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.case_ids[i].clone(), self.labels[i].map(|l| l.to_string()).unwrap_or_default()];
            rec.extend(self.row(i).iter().map(|v| format_real(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Round-trippable scientific notation with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["f1".into(), "f2".into()],
            vec![Some(1), None],
            vec![0.1, -1e-300, std::f64::consts::PI, 12345.678],
        )
        .unwrap();
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        assert_eq!(FeatureMatrix::read_csv(&p).unwrap(), m);
    }

    #[test]
    fn rejects_duplicates_and_nan() {
        assert!(FeatureMatrix::new(vec!["a".into()], vec!["x".into(), "x".into()], vec![None], vec![1.0, 2.0]).is_err());
        assert!(FeatureMatrix::new(vec!["a".into()], vec!["x".into()], vec![None], vec![f64::NAN]).is_err());
    }
}
