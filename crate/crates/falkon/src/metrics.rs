//! Evaluation metrics: MSE, RMSE, relative error, classification error, AUC.

use ndarray::Array1;

use crate::error::{Error, Result};

/// Metrics for one evaluation split. Regression and classification fields
/// are filled according to the task; absent ones stay `None`.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct EvalReport {
    pub n_test: usize,
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
    /// RMSE / mean(y); omitted when mean(y) == 0 (see
    /// `relative_error_omitted`).
    pub relative_error: Option<f64>,
    pub relative_error_omitted: bool,
    /// Alternate normalization `||yhat - y|| / ||y||`.
    pub relative_error_norm: Option<f64>,
    pub c_err: Option<f64>,
    pub auc: Option<f64>,
}

impl EvalReport {
    /// One CSV header + row.
    pub fn to_csv(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map_or(String::new(), |x| format!("{x}"))
        }
        format!(
            "n_test,mse,rmse,relative_error,relative_error_norm,c_err,auc\n{},{},{},{},{},{},{}\n",
            self.n_test,
            cell(self.mse),
            cell(self.rmse),
            cell(self.relative_error),
            cell(self.relative_error_norm),
            cell(self.c_err),
            cell(self.auc),
        )
    }

    /// Aligned key-value text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<20} {}\n", "n_test", self.n_test));
        let mut row = |k: &str, v: Option<f64>| {
            if let Some(x) = v {
                out.push_str(&format!("{k:<20} {x}\n"));
            }
        };
        row("mse", self.mse);
        row("rmse", self.rmse);
        row("relative_error", self.relative_error);
        row("relative_error_norm", self.relative_error_norm);
        row("c_err", self.c_err);
        row("auc", self.auc);
        if self.relative_error_omitted {
            out.push_str("relative_error       omitted (mean of labels is zero)\n");
        }
        out
    }
}

/// Regression metrics: `(mse, rmse, relative_error)` where the relative
/// error is `rmse / mean(y)`, `None` when `mean(y) == 0`.
pub fn regression_metrics(
    y: &Array1<f64>,
    yhat: &Array1<f64>,
) -> Result<(f64, f64, Option<f64>)> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let n = y.len() as f64;
    let diff = yhat - y;
    let mse = diff.dot(&diff) / n;
    let rmse = mse.sqrt();
    let mean = y.sum() / n;
    let rel = if mean == 0.0 { None } else { Some(rmse / mean) };
    Ok((mse, rmse, rel))
}

/// `||yhat - y|| / ||y||`; `None` when `y` is the zero vector.
pub fn relative_error_norm(y: &Array1<f64>, yhat: &Array1<f64>) -> Result<Option<f64>> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    let ynorm = y.dot(y).sqrt();
    if ynorm == 0.0 {
        return Ok(None);
    }
    let diff = yhat - y;
    Ok(Some(diff.dot(&diff).sqrt() / ynorm))
}

/// Binary classification error with labels in {-1, +1}: fraction of
/// `sign(score) != y`, with score 0 predicted as +1.
pub fn classification_error(y: &Array1<f64>, scores: &Array1<f64>) -> Result<f64> {
    if y.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} scores",
            y.len(),
            scores.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    for &l in y {
        if l != 1.0 && l != -1.0 {
            return Err(Error::InvalidArgument(format!(
                "binary labels must be -1 or +1, got {l}"
            )));
        }
    }
    let wrong = y
        .iter()
        .zip(scores.iter())
        .filter(|(&l, &s)| {
            let pred = if s >= 0.0 { 1.0 } else { -1.0 };
            pred != l
        })
        .count();
    Ok(wrong as f64 / y.len() as f64)
}

/// Multiclass classification error: fraction of rows whose argmax column
/// differs from the class id (ties to the lowest column index).
pub fn multiclass_error(class_ids: &[usize], scores: &ndarray::Array2<f64>) -> Result<f64> {
    if class_ids.len() != scores.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} score rows",
            class_ids.len(),
            scores.nrows()
        )));
    }
    if class_ids.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut wrong = 0usize;
    for (i, &c) in class_ids.iter().enumerate() {
        let row = scores.row(i);
        let mut best = 0usize;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best != c {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / class_ids.len() as f64)
}

/// AUC with labels in {-1, +1}: the probability a random positive outranks
/// a random negative, ties counted 1/2 (rank-sum formulation, O(n log n)).
pub fn auc(y: &Array1<f64>, scores: &Array1<f64>) -> Result<f64> {
    if y.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} scores",
            y.len(),
            scores.len()
        )));
    }
    let n_pos = y.iter().filter(|&&l| l == 1.0).count();
    let n_neg = y.iter().filter(|&&l| l == -1.0).count();
    if n_pos + n_neg != y.len() {
        return Err(Error::InvalidArgument("binary labels must be -1 or +1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "AUC needs both classes present".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    // midranks: average rank within each tie group
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group spans ranks i+1 ..= j
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if y[idx] == 1.0 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let np = n_pos as f64;
    let nn = n_neg as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}
