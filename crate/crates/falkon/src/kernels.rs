//! Kernel evaluation and block-wise kernel matrix construction.
//!
//! The Gaussian kernel uses the `exp(-||x - x'||^2 / (2 sigma^2))` width
//! convention. Squared distances are clamped at zero before exponentiation so
//! `K(x, x) = 1` exactly despite cancellation.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Row};
use crate::error::{Error, Result};

/// Kernel family and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
    GaussianDiag { widths: Vec<f64> },
    Linear,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Gaussian { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
                }
            }
            KernelSpec::GaussianDiag { widths } => {
                if widths.is_empty() || !widths.iter().all(|w| *w > 0.0) {
                    return Err(Error::InvalidArgument("widths must all be > 0".into()));
                }
            }
            KernelSpec::Linear => {}
        }
        Ok(())
    }
}

fn check_dims(spec: &KernelSpec, dx: usize, dy: usize) -> Result<()> {
    if dx != dy {
        return Err(Error::DimensionMismatch(format!("row dims {dx} vs {dy}")));
    }
    if let KernelSpec::GaussianDiag { widths } = spec {
        if widths.len() != dx {
            return Err(Error::DimensionMismatch(format!(
                "{} widths for dimension {dx}",
                widths.len()
            )));
        }
    }
    Ok(())
}

fn gaussian_from_sqdist(sq: f64, sigma: f64) -> f64 {
    (-sq.max(0.0) / (2.0 * sigma * sigma)).exp()
}

fn sqdist_dense(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let d = a - b;
        s += d * d;
    }
    s
}

/// Evaluate the kernel between two dense rows.
pub fn kernel_eval_dense(
    spec: &KernelSpec,
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_dims(spec, x.len(), y.len())?;
    Ok(match spec {
        KernelSpec::Gaussian { sigma } => gaussian_from_sqdist(sqdist_dense(x, y), *sigma),
        KernelSpec::GaussianDiag { widths } => {
            let mut s = 0.0;
            for ((a, b), w) in x.iter().zip(y.iter()).zip(widths.iter()) {
                let d = a - b;
                s += d * d / (2.0 * w * w);
            }
            (-s.max(0.0)).exp()
        }
        KernelSpec::Linear => x.dot(&y),
    })
}

/// Evaluate the kernel between a (possibly sparse) dataset row and a dense
/// center. The Gaussian variant uses `||x||^2 + ||c||^2 - 2<x,c>` on sparse
/// rows so cost stays O(nnz).
pub fn kernel_eval_row(
    spec: &KernelSpec,
    x: Row<'_>,
    center: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_dims(spec, x.dim(), center.len())?;
    match x {
        Row::Dense(v) => kernel_eval_dense(spec, v, center),
        Row::Sparse { entries, .. } => Ok(match spec {
            KernelSpec::Gaussian { sigma } => {
                let xx: f64 = entries.iter().map(|&(_, v)| v * v).sum();
                let cc = center.dot(&center);
                let xc: f64 = entries.iter().map(|&(j, v)| v * center[j]).sum();
                gaussian_from_sqdist(xx + cc - 2.0 * xc, *sigma)
            }
            KernelSpec::GaussianDiag { widths } => {
                // per-dimension widths break the norm trick; walk the dense
                // center and merge the sparse entries
                let mut s = 0.0;
                let mut it = entries.iter().peekable();
                for (j, c) in center.iter().enumerate() {
                    let xj = match it.peek() {
                        Some(&&(k, v)) if k == j => {
                            it.next();
                            v
                        }
                        _ => 0.0,
                    };
                    let d = xj - c;
                    s += d * d / (2.0 * widths[j] * widths[j]);
                }
                (-s.max(0.0)).exp()
            }
            KernelSpec::Linear => entries.iter().map(|&(j, v)| v * center[j]).sum(),
        }),
    }
}

/// Kernel block for rows `[row_start, row_end)` of the dataset against the
/// centers: entry (i, j) = K(row_{row_start + i}, center_j).
pub fn kernel_block(
    spec: &KernelSpec,
    data: &Dataset,
    row_start: usize,
    row_end: usize,
    centers: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let m = centers.nrows();
    let mut out = Array2::zeros((row_end - row_start, m));
    for i in row_start..row_end {
        let row = data.row(i);
        for j in 0..m {
            out[[i - row_start, j]] = kernel_eval_row(spec, row, centers.row(j))?;
        }
    }
    Ok(out)
}

/// The full n-by-M matrix K_nM (desk scale; used by oracles and baselines).
pub fn kernel_cross(
    spec: &KernelSpec,
    data: &Dataset,
    centers: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    kernel_block(spec, data, 0, data.n(), centers)
}

/// The symmetric M-by-M kernel matrix of the centers (K_MM).
pub fn kernel_square(spec: &KernelSpec, centers: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let m = centers.nrows();
    if m == 0 {
        return Err(Error::InvalidArgument("no centers".into()));
    }
    let mut out = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..=i {
            let v = kernel_eval_dense(spec, centers.row(i), centers.row(j))?;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

/// The full n-by-n training kernel matrix (desk scale only).
pub fn kernel_full(spec: &KernelSpec, data: &Dataset) -> Result<Array2<f64>> {
    let n = data.n();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let ri = data.row(i);
        for j in 0..=i {
            let v = match (ri, data.row(j)) {
                (Row::Dense(a), Row::Dense(b)) => kernel_eval_dense(spec, a, b)?,
                (a, b) => kernel_eval_row(spec, a, b.to_dense().view())?,
            };
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

/// Largest diagonal kernel value over the training set (the kappa^2 estimate).
pub fn max_diag(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for i in 0..data.n() {
        let r = data.row(i);
        let v = kernel_eval_row(spec, r, r.to_dense().view())?;
        best = best.max(v);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array1};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    use crate::linalg::sym_eig;

    #[test]
    fn gaussian_same_point_is_one() {
        let spec = KernelSpec::Gaussian { sigma: 2.0 };
        let x = arr1(&[0.3, -1.2, 4.0]);
        assert_eq!(kernel_eval_dense(&spec, x.view(), x.view()).unwrap(), 1.0);
    }

    #[test]
    fn linear_dot_product() {
        let spec = KernelSpec::Linear;
        let v = kernel_eval_dense(&spec, arr1(&[1.0, 2.0]).view(), arr1(&[3.0, 4.0]).view());
        assert_eq!(v.unwrap(), 11.0);
    }

    #[test]
    fn gaussian_scalar_formula() {
        let spec = KernelSpec::Gaussian { sigma: 5.0 };
        let v = kernel_eval_dense(&spec, arr1(&[0.0, 0.0]).view(), arr1(&[3.0, 4.0]).view())
            .unwrap();
        assert!((v - (-25.0f64 / 50.0).exp()).abs() < 1e-12);
        assert!((v - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn gaussian_diag_formula() {
        let spec = KernelSpec::GaussianDiag { widths: vec![1.0, 2.0] };
        let v = kernel_eval_dense(&spec, arr1(&[0.0, 0.0]).view(), arr1(&[1.0, 2.0]).view())
            .unwrap();
        let expect = (-(1.0 / 2.0 + 4.0 / 8.0) as f64).exp();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let spec = KernelSpec::Gaussian { sigma: 1.0 };
        assert!(kernel_eval_dense(&spec, arr1(&[1.0]).view(), arr1(&[1.0, 2.0]).view()).is_err());
        let spec = KernelSpec::GaussianDiag { widths: vec![1.0] };
        assert!(kernel_eval_dense(&spec, arr1(&[1.0, 2.0]).view(), arr1(&[1.0, 2.0]).view())
            .is_err());
    }

    #[test]
    fn symmetry_all_variants() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let specs = [
            KernelSpec::Gaussian { sigma: 1.7 },
            KernelSpec::GaussianDiag { widths: vec![0.5, 2.0, 1.0] },
            KernelSpec::Linear,
        ];
        for _ in 0..20 {
            let x = Array1::from_shape_fn(3, |_| rng.random::<f64>() * 4.0 - 2.0);
            let y = Array1::from_shape_fn(3, |_| rng.random::<f64>() * 4.0 - 2.0);
            for spec in &specs {
                let a = kernel_eval_dense(spec, x.view(), y.view()).unwrap();
                let b = kernel_eval_dense(spec, y.view(), x.view()).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn gaussian_range() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let spec = KernelSpec::Gaussian { sigma: 1.0 };
        for _ in 0..50 {
            let x = Array1::from_shape_fn(2, |_| rng.random::<f64>());
            let y = Array1::from_shape_fn(2, |_| rng.random::<f64>());
            let v = kernel_eval_dense(&spec, x.view(), y.view()).unwrap();
            assert!(v > 0.0 && v <= 1.0);
            if x != y {
                assert!(v < 1.0);
            }
        }
    }

    #[test]
    fn block_matches_elementwise_oracle() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let feats = ndarray::Array2::from_shape_fn((5, 3), |_| rng.random::<f64>());
        let centers = ndarray::Array2::from_shape_fn((4, 3), |_| rng.random::<f64>());
        let ds = Dataset::from_dense(feats, Array1::zeros(5)).unwrap();
        let spec = KernelSpec::Gaussian { sigma: 0.8 };
        let block = kernel_cross(&spec, &ds, centers.view()).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let v = kernel_eval_row(&spec, ds.row(i), centers.row(j)).unwrap();
                assert_eq!(block[[i, j]], v);
            }
        }
    }

    #[test]
    fn block_partition_is_bitwise_consistent() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let feats = ndarray::Array2::from_shape_fn((9, 2), |_| rng.random::<f64>());
        let centers = ndarray::Array2::from_shape_fn((3, 2), |_| rng.random::<f64>());
        let ds = Dataset::from_dense(feats, Array1::zeros(9)).unwrap();
        let spec = KernelSpec::Gaussian { sigma: 1.0 };
        let whole = kernel_cross(&spec, &ds, centers.view()).unwrap();
        let mut parts = Array2::zeros((9, 3));
        for (lo, hi) in [(0, 4), (4, 9)] {
            let b = kernel_block(&spec, &ds, lo, hi, centers.view()).unwrap();
            parts.slice_mut(ndarray::s![lo..hi, ..]).assign(&b);
        }
        assert_eq!(whole, parts);
    }

    #[test]
    fn square_single_and_duplicate_centers() {
        let spec = KernelSpec::Gaussian { sigma: 1.0 };
        let one = arr2(&[[0.5, 0.5]]);
        let k1 = kernel_square(&spec, one.view()).unwrap();
        assert_eq!(k1[[0, 0]], 1.0);

        let dup = arr2(&[[0.5, 0.5], [0.5, 0.5]]);
        let k2 = kernel_square(&spec, dup.view()).unwrap();
        assert_eq!(k2, arr2(&[[1.0, 1.0], [1.0, 1.0]]));
    }

    #[test]
    fn square_is_psd() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let centers = ndarray::Array2::from_shape_fn((30, 4), |_| rng.random::<f64>() * 2.0);
        let spec = KernelSpec::Gaussian { sigma: 0.7 };
        let k = kernel_square(&spec, centers.view()).unwrap();
        let (vals, _) = sym_eig(&k).unwrap();
        let trace: f64 = (0..30).map(|i| k[[i, i]]).sum();
        assert!(vals[vals.len() - 1] >= -1e-8 * trace);
    }

    #[test]
    fn sparse_matches_dense_evaluation() {
        let ds = crate::data::parse_sparse_index_value("0 1:0.5 3:2.0\n1 2:1.0").unwrap();
        let centers = arr2(&[[0.5, 0.0, 2.0], [0.0, 1.0, 0.0]]);
        for spec in [
            KernelSpec::Gaussian { sigma: 1.3 },
            KernelSpec::GaussianDiag { widths: vec![1.0, 0.5, 2.0] },
            KernelSpec::Linear,
        ] {
            for i in 0..2 {
                for j in 0..2 {
                    let sparse = kernel_eval_row(&spec, ds.row(i), centers.row(j)).unwrap();
                    let dense =
                        kernel_eval_dense(&spec, ds.row(i).to_dense().view(), centers.row(j))
                            .unwrap();
                    assert!((sparse - dense).abs() < 1e-14);
                }
            }
        }
    }
}
