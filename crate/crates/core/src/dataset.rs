//! Sample matrix with binary labels, standardization, and CSV persistence.
//!
//! Every feature column is standardized to zero mean and unit variance
//! (population variance) once, at construction. Row subsets taken for
//! cross-validation folds inherit the parent standardization instead of
//! re-standardizing, so fold kernels see the same coordinates as the full
//! dataset.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance under which a column standard deviation is treated as
/// zero. Guards against blowing up constant columns whose variance is pure
/// rounding debris.
const SD_TOL: f64 = 1e-12;

/// Standardized samples, labels in {-1, +1}, and optional ground-truth
/// relevant feature ids for precision/recall scoring.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<f64>,
    relevant: Option<BTreeSet<usize>>,
    feature_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct SidecarMeta {
    format_version: u32,
    relevant: Vec<usize>,
}

impl Dataset {
    /// Validates shapes, labels, and finiteness, then standardizes each
    /// column in place. Columns with (effectively) zero standard deviation
    /// become all-zero rather than amplified rounding noise.
    pub fn new(x: Array2<f64>, y: Vec<f64>, relevant: Option<BTreeSet<usize>>) -> Result<Self> {
        let (m, n) = (x.nrows(), x.ncols());
        if m < 2 {
            return Err(Error::InvalidData(format!(
                "dataset needs at least 2 rows, got {m}"
            )));
        }
        if n < 1 {
            return Err(Error::InvalidData("dataset has no feature columns".into()));
        }
        if y.len() != m {
            return Err(Error::InvalidData(format!(
                "label length {} does not match row count {m}",
                y.len()
            )));
        }
        for (i, v) in y.iter().enumerate() {
            if *v != 1.0 && *v != -1.0 {
                return Err(Error::InvalidData(format!(
                    "label at row {} must be -1 or +1, got {v}",
                    i + 1
                )));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "sample matrix contains non-finite values".into(),
            ));
        }
        if let Some(rel) = &relevant {
            if let Some(&bad) = rel.iter().find(|f| **f >= n) {
                return Err(Error::InvalidData(format!(
                    "relevant feature id {bad} out of range for {n} features"
                )));
            }
        }
        let mut x = x;
        for mut col in x.columns_mut() {
            let mean = col.sum() / m as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let sd = var.sqrt();
            if sd <= SD_TOL * mean.abs().max(1.0) {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - mean) / sd);
            }
        }
        Ok(Dataset {
            x,
            y,
            relevant,
            feature_names: None,
        })
    }

    /// Attaches display names for the features.
    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features() {
            return Err(Error::InvalidData(format!(
                "{} feature names for {} features",
                names.len(),
                self.n_features()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn relevant(&self) -> Option<&BTreeSet<usize>> {
        self.relevant.as_ref()
    }

    pub fn has_both_classes(&self) -> bool {
        self.y.iter().any(|v| *v > 0.0) && self.y.iter().any(|v| *v < 0.0)
    }

    /// Row subset that keeps the parent standardization. Rows may repeat;
    /// out-of-range ids error.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("row subset is empty".into()));
        }
        if let Some(&bad) = rows.iter().find(|r| **r >= self.m()) {
            return Err(Error::InvalidParameter(format!(
                "row id {bad} out of range for {} rows",
                self.m()
            )));
        }
        let n = self.n_features();
        let mut x = Array2::<f64>::zeros((rows.len(), n));
        let mut y = Vec::with_capacity(rows.len());
        for (out, &r) in rows.iter().enumerate() {
            x.row_mut(out).assign(&self.x.row(r));
            y.push(self.y[r]);
        }
        Ok(Dataset {
            x,
            y,
            relevant: self.relevant.clone(),
            feature_names: self.feature_names.clone(),
        })
    }

    /// Gathers the submatrix at the given rows and feature columns.
    pub(crate) fn gather(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((rows.len(), cols.len()));
        for (oi, &r) in rows.iter().enumerate() {
            for (oj, &c) in cols.iter().enumerate() {
                out[[oi, oj]] = self.x[[r, c]];
            }
        }
        out
    }

    /// Gathers the given feature columns over all rows.
    pub(crate) fn gather_cols(&self, cols: &[usize]) -> Array2<f64> {
        let m = self.m();
        let mut out = Array2::<f64>::zeros((m, cols.len()));
        for (oj, &c) in cols.iter().enumerate() {
            for i in 0..m {
                out[[i, oj]] = self.x[[i, c]];
            }
        }
        out
    }

    pub(crate) fn gather_labels(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.y[r]).collect()
    }
}

/// Writes `ds` as CSV with header `f0,...,f{n-1},label`, floats with enough
/// digits to round-trip exactly, labels as `-1` / `1`. If the dataset has
/// ground-truth relevant features, a `<path>.meta.json` sidecar records them.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_err)?;
    let n = ds.n_features();
    let mut header: Vec<String> = (0..n).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    wtr.write_record(&header).map_err(csv_err)?;
    let mut record = Vec::with_capacity(n + 1);
    for i in 0..ds.m() {
        record.clear();
        for j in 0..n {
            record.push(format!("{:?}", ds.x[[i, j]]));
        }
        record.push(format!("{}", ds.y[i] as i64));
        wtr.write_record(&record).map_err(csv_err)?;
    }
    wtr.flush()?;
    if let Some(rel) = &ds.relevant {
        let meta = SidecarMeta {
            format_version: 1,
            relevant: rel.iter().copied().collect(),
        };
        let text = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::InvalidData(format!("sidecar serialization failed: {e}")))?;
        fs::write(sidecar_path(path), text)?;
    }
    Ok(())
}

/// Reads a CSV written by [`write_csv`] (or any file matching that contract)
/// and standardizes it. A `<path>.meta.json` sidecar, if present, supplies
/// the ground-truth relevant features. Malformed content errors with the
/// 1-based data row (and column name where that helps).
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.len() < 2 {
        return Err(Error::InvalidData(
            "header must contain at least one feature column and a label column".into(),
        ));
    }
    let n = headers.len() - 1;
    for (j, name) in headers.iter().take(n).enumerate() {
        let expect = format!("f{j}");
        if name != expect {
            return Err(Error::InvalidData(format!(
                "header column {} is '{name}', expected '{expect}'",
                j + 1
            )));
        }
    }
    if &headers[n] != "label" {
        return Err(Error::InvalidData(format!(
            "last header column is '{}', expected 'label'",
            &headers[n]
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row_no = idx + 1;
        let rec = rec.map_err(csv_err)?;
        if rec.len() != n + 1 {
            return Err(Error::InvalidData(format!(
                "row {row_no} has {} fields, expected {}",
                rec.len(),
                n + 1
            )));
        }
        let mut vals = Vec::with_capacity(n);
        for j in 0..n {
            let field = &rec[j];
            let v: f64 = field.parse().map_err(|_| {
                Error::InvalidData(format!(
                    "row {row_no}, column f{j}: cannot parse '{field}' as a number"
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "row {row_no}, column f{j}: non-finite value '{field}'"
                )));
            }
            vals.push(v);
        }
        let label_field = &rec[n];
        let label: f64 = match label_field.trim() {
            "1" | "+1" | "1.0" | "+1.0" => 1.0,
            "-1" | "-1.0" => -1.0,
            other => {
                return Err(Error::InvalidData(format!(
                    "malformed label '{other}' at row {row_no}; expected -1 or 1"
                )))
            }
        };
        rows.push(vals);
        y.push(label);
    }
    if rows.len() < 2 {
        return Err(Error::InvalidData(format!(
            "dataset needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let m = rows.len();
    let mut x = Array2::<f64>::zeros((m, n));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    let relevant = read_sidecar(path, n)?;
    Dataset::new(x, y, relevant)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

fn read_sidecar(path: &Path, n: usize) -> Result<Option<BTreeSet<usize>>> {
    let sp = sidecar_path(path);
    if !sp.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&sp)?;
    let meta: SidecarMeta = serde_json::from_str(&text).map_err(|e| {
        Error::InvalidData(format!("sidecar {} is malformed: {e}", sp.display()))
    })?;
    if meta.format_version != 1 {
        return Err(Error::InvalidData(format!(
            "sidecar {} has unsupported format_version {}",
            sp.display(),
            meta.format_version
        )));
    }
    let rel: BTreeSet<usize> = meta.relevant.into_iter().collect();
    if let Some(&bad) = rel.iter().find(|f| **f >= n) {
        return Err(Error::InvalidData(format!(
            "sidecar relevant feature id {bad} out of range for {n} features"
        )));
    }
    Ok(Some(rel))
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::InvalidData(format!("csv: {e}"))
    }
}
