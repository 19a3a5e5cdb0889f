//! Dataset representation, file ingestion, normalization and train/test splitting.
//!
//! Two on-disk formats are supported, both plain text:
//!
//! * dense CSV: one sample per line, comma-separated numeric fields, one of
//!   which is the label (by default the last);
//! * sparse `label idx:val idx:val ...` with 1-based, strictly ascending
//!   indices (the classic sparse-ML text format). Missing entries are zero.
//!
//! All randomness is driven by xoshiro256++ seeded through splitmix64
//! (`Xoshiro256PlusPlus::seed_from_u64`), so splits are reproducible across
//! runs and platforms for a given seed.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Feature storage: dense row-major matrix or sparse row lists.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense(Array2<f64>),
    Sparse {
        /// Per-row `(column, value)` pairs with strictly ascending columns.
        rows: Vec<Vec<(usize, f64)>>,
        dim: usize,
    },
}

/// A view of a single sample's features.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Dense(ArrayView1<'a, f64>),
    Sparse { entries: &'a [(usize, f64)], dim: usize },
}

impl<'a> Row<'a> {
    pub fn dim(&self) -> usize {
        match self {
            Row::Dense(v) => v.len(),
            Row::Sparse { dim, .. } => *dim,
        }
    }

    /// Dot product with a dense vector.
    pub fn dot_dense(&self, other: ArrayView1<'_, f64>) -> f64 {
        match self {
            Row::Dense(v) => v.dot(&other),
            Row::Sparse { entries, .. } => {
                entries.iter().map(|&(j, x)| x * other[j]).sum()
            }
        }
    }

    pub fn sq_norm(&self) -> f64 {
        match self {
            Row::Dense(v) => v.dot(v),
            Row::Sparse { entries, .. } => entries.iter().map(|&(_, x)| x * x).sum(),
        }
    }

    pub fn to_dense(&self) -> Array1<f64> {
        match self {
            Row::Dense(v) => v.to_owned(),
            Row::Sparse { entries, dim } => {
                let mut out = Array1::zeros(*dim);
                for &(j, x) in *entries {
                    out[j] = x;
                }
                out
            }
        }
    }
}

/// The `(x_i, y_i)` sample: an n-by-d feature matrix plus n labels.
///
/// Immutable after construction; safe to share read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Features,
    labels: Array1<f64>,
}

impl Dataset {
    pub fn new(features: Features, labels: Array1<f64>) -> Result<Self> {
        let n = match &features {
            Features::Dense(m) => m.nrows(),
            Features::Sparse { rows, .. } => rows.len(),
        };
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} feature rows",
                labels.len(),
                n
            )));
        }
        if let Features::Sparse { rows, dim } = &features {
            for (i, row) in rows.iter().enumerate() {
                let mut prev = None;
                for &(j, _) in row {
                    if j >= *dim {
                        return Err(Error::DimensionMismatch(format!(
                            "row {i}: column {j} >= dim {dim}"
                        )));
                    }
                    if prev.is_some_and(|p| j <= p) {
                        return Err(Error::InvalidArgument(format!(
                            "row {i}: indices not ascending"
                        )));
                    }
                    prev = Some(j);
                }
            }
        }
        let ds = Dataset { features, labels };
        if !ds.is_finite() {
            return Err(Error::InvalidArgument("non-finite value in dataset".into()));
        }
        Ok(ds)
    }

    pub fn from_dense(features: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        Self::new(Features::Dense(features), labels)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        match &self.features {
            Features::Dense(m) => m.ncols(),
            Features::Sparse { dim, .. } => *dim,
        }
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.features, Features::Dense(_))
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.features {
            Features::Dense(m) => Row::Dense(m.row(i)),
            Features::Sparse { rows, dim } => Row::Sparse { entries: &rows[i], dim: *dim },
        }
    }

    /// Densify the given rows into a matrix (used to extract Nystrom centers).
    pub fn dense_rows(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.d()));
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).assign(&self.row(i).to_dense());
        }
        out
    }

    /// A new dataset containing the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let labels = Array1::from_iter(indices.iter().map(|&i| self.labels[i]));
        let features = match &self.features {
            Features::Dense(m) => {
                let mut out = Array2::zeros((indices.len(), m.ncols()));
                for (k, &i) in indices.iter().enumerate() {
                    out.row_mut(k).assign(&m.row(i));
                }
                Features::Dense(out)
            }
            Features::Sparse { rows, dim } => Features::Sparse {
                rows: indices.iter().map(|&i| rows[i].clone()).collect(),
                dim: *dim,
            },
        };
        Dataset { features, labels }
    }

    fn is_finite(&self) -> bool {
        let feats_ok = match &self.features {
            Features::Dense(m) => m.iter().all(|x| x.is_finite()),
            Features::Sparse { rows, .. } => {
                rows.iter().flatten().all(|&(_, x)| x.is_finite())
            }
        };
        feats_ok && self.labels.iter().all(|y| y.is_finite())
    }
}

/// Which CSV column carries the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    Index(usize),
}

/// Load a dense CSV file. Every line must have the same number of
/// comma-separated numeric fields; one column is the label.
pub fn load_dense_csv(path: &Path, label_column: LabelColumn, skip_header: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dense_csv(&text, label_column, skip_header)
}

pub fn parse_dense_csv(text: &str, label_column: LabelColumn, skip_header: bool) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let human_line = lineno + 1;
        if skip_header && lineno == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Parse {
                    line: human_line,
                    msg: format!("expected {w} fields, found {}", fields.len()),
                })
            }
            _ => {}
        }
        let label_idx = match label_column {
            LabelColumn::Last => fields.len() - 1,
            LabelColumn::Index(i) => {
                if i >= fields.len() {
                    return Err(Error::Parse {
                        line: human_line,
                        msg: format!("label column {i} out of range"),
                    });
                }
                i
            }
        };
        let mut feat = Vec::with_capacity(fields.len() - 1);
        for (j, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: human_line,
                msg: format!("non-numeric field {:?}", f.trim()),
            })?;
            if j == label_idx {
                labels.push(v);
            } else {
                feat.push(v);
            }
        }
        rows.push(feat);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no rows".into() });
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / d;
    let features = Array2::from_shape_vec((n, d), flat)
        .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
    Dataset::from_dense(features, Array1::from_vec(labels))
}

/// Load the sparse `label idx:val ...` format (1-based ascending indices).
/// The dimensionality is the maximum index seen.
pub fn load_sparse_index_value(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_sparse_index_value(&text)
}

pub fn parse_sparse_index_value(text: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let human_line = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label: f64 = parts
            .next()
            .ok_or(Error::Parse { line: human_line, msg: "empty line".into() })?
            .parse()
            .map_err(|_| Error::Parse { line: human_line, msg: "non-numeric label".into() })?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut prev: Option<usize> = None;
        for tok in parts {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: human_line,
                msg: format!("expected idx:val, found {tok:?}"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| Error::Parse {
                line: human_line,
                msg: format!("bad index {idx_s:?}"),
            })?;
            if idx < 1 {
                return Err(Error::Parse { line: human_line, msg: "index < 1".into() });
            }
            let val: f64 = val_s.parse().map_err(|_| Error::Parse {
                line: human_line,
                msg: format!("bad value {val_s:?}"),
            })?;
            if prev.is_some_and(|p| idx <= p) {
                return Err(Error::Parse { line: human_line, msg: "indices not ascending".into() });
            }
            prev = Some(idx);
            dim = dim.max(idx);
            row.push((idx - 1, val));
        }
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no rows".into() });
    }
    Dataset::new(Features::Sparse { rows, dim }, Array1::from_vec(labels))
}

/// Write a dataset back to its text format. Floats are printed with the
/// shortest round-tripping decimal representation, so read-back is exact.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    match ds.features() {
        Features::Dense(m) => {
            for i in 0..ds.n() {
                for x in m.row(i) {
                    let _ = write!(out, "{x},");
                }
                let _ = writeln!(out, "{}", ds.labels()[i]);
            }
        }
        Features::Sparse { rows, .. } => {
            for (i, row) in rows.iter().enumerate() {
                let _ = write!(out, "{}", ds.labels()[i]);
                for &(j, x) in row {
                    let _ = write!(out, " {}:{x}", j + 1);
                }
                let _ = writeln!(out);
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-feature z-score statistics fitted on training data.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fit per-feature mean and sample standard deviation (1/(n-1) normalization).
/// Zero-variance features get std = 1 so the transformed feature is exactly 0.
pub fn zscore_fit(train: &Dataset) -> Result<NormStats> {
    let m = match train.features() {
        Features::Dense(m) => m,
        Features::Sparse { .. } => {
            return Err(Error::InvalidArgument(
                "z-score normalization requires dense features".into(),
            ))
        }
    };
    let n = m.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut mean = vec![0.0; m.ncols()];
    let mut std = vec![1.0; m.ncols()];
    for j in 0..m.ncols() {
        let col = m.column(j);
        let mu = col.sum() / n as f64;
        mean[j] = mu;
        if n > 1 {
            let ss: f64 = col.iter().map(|x| (x - mu) * (x - mu)).sum();
            let s = (ss / (n - 1) as f64).sqrt();
            std[j] = if s > 0.0 { s } else { 1.0 };
        }
    }
    Ok(NormStats { mean, std })
}

/// Apply train-fitted statistics: `(x - mean) / std` per feature.
pub fn zscore_apply(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    let m = match ds.features() {
        Features::Dense(m) => m,
        Features::Sparse { .. } => {
            return Err(Error::InvalidArgument(
                "z-score normalization requires dense features".into(),
            ))
        }
    };
    if m.ncols() != stats.mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} features vs {} stats",
            m.ncols(),
            stats.mean.len()
        )));
    }
    let mut out = m.clone();
    for j in 0..out.ncols() {
        let (mu, s) = (stats.mean[j], stats.std[j]);
        out.column_mut(j).mapv_inplace(|x| (x - mu) / s);
    }
    Dataset::from_dense(out, ds.labels().clone())
}

/// Split into (train, test) with `test size = round(test_fraction * n)`.
///
/// Row indices are shuffled by Fisher-Yates under xoshiro256++ seeded from
/// `seed`; the test set takes the last `round(f*n)` shuffled indices.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let n = ds.n();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 rows to split".into()));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let test_size = (test_fraction * n as f64).round() as usize;
    let (train_idx, test_idx) = indices.split_at(n - test_size);
    Ok((ds.select(train_idx), ds.select(test_idx)))
}
