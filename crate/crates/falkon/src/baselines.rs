//! Exact and iterative reference solvers: dense KRR, the direct Nystrom
//! solve, plain gradient descent, and unpreconditioned CG on the Nystrom
//! system. These serve as oracles for FALKON and as comparison baselines.

use std::time::Instant;

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{kernel_cross, kernel_full, kernel_square, KernelSpec};
use crate::linalg::{
    cholesky_upper, conjugate_gradient_traced, sym_eig, tri_solve, TriMode,
};
use crate::precond::default_jitter;
use crate::sampling::CenterSelection;
use crate::solver::FalkonModel;

/// Default cap on dense O(n^3) solves.
pub const DEFAULT_DENSE_CAP: usize = 4000;

/// One row of an iterative solver's convergence trace.
#[derive(Debug, Clone)]
pub struct IterPoint {
    pub iteration: usize,
    pub objective: f64,
    pub test_metric: Option<f64>,
    pub seconds: f64,
}

/// Per-iteration trace; iteration indices are strictly increasing.
#[derive(Debug, Clone, Default)]
pub struct IterTrace {
    pub points: Vec<IterPoint>,
}

impl IterTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,test_metric,seconds\n");
        for p in &self.points {
            let tm = p.test_metric.map_or(String::new(), |v| format!("{v}"));
            out.push_str(&format!("{},{},{},{}\n", p.iteration, p.objective, tm, p.seconds));
        }
        out
    }
}

fn make_model(centers: &Array2<f64>, alpha: &Array1<f64>, kernel: &KernelSpec) -> FalkonModel {
    FalkonModel {
        centers: centers.rows().into_iter().map(|r| r.to_vec()).collect(),
        alpha: alpha.to_vec(),
        kernel: kernel.clone(),
        norm_stats: None,
        label_offset: None,
    }
}

/// Exact KRR: solve `(K_nn + lambda n I) alpha = y` densely. The O(n^3)
/// oracle; refuses when n exceeds `dense_cap`.
pub fn krr_direct(
    train: &Dataset,
    kernel: &KernelSpec,
    lambda: f64,
    dense_cap: usize,
) -> Result<FalkonModel> {
    let n = train.n();
    if n > dense_cap {
        return Err(Error::DenseCapExceeded { n, cap: dense_cap });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be > 0".into()));
    }
    let mut k = kernel_full(kernel, train)?;
    let ln = lambda * n as f64;
    for i in 0..n {
        k[[i, i]] += ln;
    }
    let r = cholesky_upper(&k)?;
    let y = tri_solve(&r, train.labels(), TriMode::Transpose)?;
    let alpha = tri_solve(&r, &y, TriMode::Upper)?;
    let centers = train.dense_rows(&(0..n).collect::<Vec<_>>());
    Ok(make_model(&centers, &alpha, kernel))
}

/// Result of the direct Nystrom solve.
pub struct NystromDirect {
    pub model: FalkonModel,
    /// True when the jittered Cholesky failed and an eigendecomposition
    /// pseudo-inverse was used instead.
    pub pseudo_inverse_used: bool,
}

/// Direct solve of the Nystrom system in normalized form:
/// `(K_nM' K_nM / n + lambda K_MM) alpha = K_nM' y / n`.
///
/// Falls back to a pseudo-inverse through the symmetric eigendecomposition
/// when the system matrix is numerically singular even with jitter.
pub fn nystrom_direct(
    train: &Dataset,
    selection: &CenterSelection,
    kernel: &KernelSpec,
    lambda: f64,
    dense_cap: usize,
) -> Result<NystromDirect> {
    let m = selection.num_centers();
    if m > dense_cap {
        return Err(Error::DenseCapExceeded { n: m, cap: dense_cap });
    }
    let centers = train.dense_rows(&selection.source_indices);
    let k_nm = kernel_cross(kernel, train, centers.view())?;
    let k_mm = kernel_square(kernel, centers.view())?;
    let n = train.n() as f64;
    let h = &k_nm.t().dot(&k_nm) / n + &(&k_mm * lambda);
    let z = k_nm.t().dot(train.labels()) / n;

    let mut jittered = h.clone();
    let jitter = default_jitter(m);
    for i in 0..m {
        jittered[[i, i]] += jitter;
    }
    match cholesky_upper(&jittered) {
        Ok(r) => {
            let y = tri_solve(&r, &z, TriMode::Transpose)?;
            let alpha = tri_solve(&r, &y, TriMode::Upper)?;
            Ok(NystromDirect {
                model: make_model(&centers, &alpha, kernel),
                pseudo_inverse_used: false,
            })
        }
        Err(_) => {
            let (vals, vecs) = sym_eig(&h)?;
            let tol = 1e-12 * vals[0].max(0.0);
            let mut alpha = Array1::zeros(m);
            for j in 0..m {
                if vals[j] > tol {
                    let c = vecs.column(j).dot(&z) / vals[j];
                    alpha.scaled_add(c, &vecs.column(j).to_owned());
                }
            }
            Ok(NystromDirect {
                model: make_model(&centers, &alpha, kernel),
                pseudo_inverse_used: true,
            })
        }
    }
}

/// Direct Nystrom solve through an explicit pseudo-inverse regardless of
/// conditioning (oracle for the rank-deficient path).
pub fn nystrom_pseudo_inverse(
    train: &Dataset,
    selection: &CenterSelection,
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<FalkonModel> {
    let centers = train.dense_rows(&selection.source_indices);
    let k_nm = kernel_cross(kernel, train, centers.view())?;
    let k_mm = kernel_square(kernel, centers.view())?;
    let n = train.n() as f64;
    let m = selection.num_centers();
    let h = &k_nm.t().dot(&k_nm) / n + &(&k_mm * lambda);
    let z = k_nm.t().dot(train.labels()) / n;
    let (vals, vecs) = sym_eig(&h)?;
    let tol = 1e-12 * vals[0].max(0.0);
    let mut alpha = Array1::zeros(m);
    for j in 0..m {
        if vals[j] > tol {
            let c = vecs.column(j).dot(&z) / vals[j];
            alpha.scaled_add(c, &vecs.column(j).to_owned());
        }
    }
    Ok(make_model(&centers, &alpha, kernel))
}

/// Context shared by the iterative baselines: the normalized Nystrom system
/// held densely (desk scale).
struct NystromSystem {
    centers: Array2<f64>,
    h: Array2<f64>,
    z: Array1<f64>,
    k_nm: Array2<f64>,
    k_mm: Array2<f64>,
    lambda: f64,
    n: f64,
}

impl NystromSystem {
    fn build(
        train: &Dataset,
        selection: &CenterSelection,
        kernel: &KernelSpec,
        lambda: f64,
    ) -> Result<Self> {
        let centers = train.dense_rows(&selection.source_indices);
        let k_nm = kernel_cross(kernel, train, centers.view())?;
        let k_mm = kernel_square(kernel, centers.view())?;
        let n = train.n() as f64;
        let h = &k_nm.t().dot(&k_nm) / n + &(&k_mm * lambda);
        let z = k_nm.t().dot(train.labels()) / n;
        Ok(NystromSystem { centers, h, z, k_nm, k_mm, lambda, n })
    }

    /// `(1/n) ||K_nM a - y||^2 + lambda a' K_MM a`
    fn objective(&self, alpha: &Array1<f64>, labels: &Array1<f64>) -> f64 {
        let resid = &self.k_nm.dot(alpha) - labels;
        resid.dot(&resid) / self.n + self.lambda * alpha.dot(&self.k_mm.dot(alpha))
    }

    fn largest_eigenvalue_estimate(&self) -> f64 {
        let m = self.h.nrows();
        let mut v = Array1::from_elem(m, 1.0 / (m as f64).sqrt());
        let mut lam: f64 = 0.0;
        for _ in 0..50 {
            let hv = self.h.dot(&v);
            lam = hv.dot(&hv).sqrt();
            if lam == 0.0 {
                break;
            }
            v = hv / lam;
        }
        lam
    }
}

fn test_rmse(
    kernel: &KernelSpec,
    centers: &Array2<f64>,
    alpha: &Array1<f64>,
    test: &Dataset,
) -> Result<f64> {
    let k = kernel_cross(kernel, test, centers.view())?;
    let resid = &k.dot(alpha) - test.labels();
    Ok((resid.dot(&resid) / test.n() as f64).sqrt())
}

/// Plain gradient descent on the normalized Nystrom quadratic from
/// `alpha_0 = 0`. When `tau` is `None` it defaults to `1 / lambda_max(H)`
/// from a power-iteration estimate.
pub fn gd_nystrom(
    train: &Dataset,
    selection: &CenterSelection,
    kernel: &KernelSpec,
    lambda: f64,
    tau: Option<f64>,
    iterations: usize,
    test: Option<&Dataset>,
) -> Result<(FalkonModel, IterTrace)> {
    let sys = NystromSystem::build(train, selection, kernel, lambda)?;
    let tau = tau.unwrap_or_else(|| {
        let l = sys.largest_eigenvalue_estimate();
        if l > 0.0 {
            1.0 / l
        } else {
            1.0
        }
    });
    let start = Instant::now();
    let mut alpha = Array1::zeros(sys.h.nrows());
    let mut trace = IterTrace::default();
    for it in 1..=iterations {
        let grad = &sys.h.dot(&alpha) - &sys.z;
        alpha.scaled_add(-tau, &grad);
        if !alpha.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence { iteration: it });
        }
        let tm = match test {
            Some(ts) => Some(test_rmse(kernel, &sys.centers, &alpha, ts)?),
            None => None,
        };
        trace.points.push(IterPoint {
            iteration: it,
            objective: sys.objective(&alpha, train.labels()),
            test_metric: tm,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((make_model(&sys.centers, &alpha, kernel), trace))
}

/// Conjugate gradient on the normalized Nystrom system without any
/// preconditioner; same CG core as FALKON.
pub fn cg_nystrom_unpreconditioned(
    train: &Dataset,
    selection: &CenterSelection,
    kernel: &KernelSpec,
    lambda: f64,
    iterations: usize,
    test: Option<&Dataset>,
) -> Result<(FalkonModel, IterTrace)> {
    let sys = NystromSystem::build(train, selection, kernel, lambda)?;
    let start = Instant::now();
    let mut trace = IterTrace::default();
    let mut err: Option<Error> = None;
    let alpha = conjugate_gradient_traced(
        |p| sys.h.dot(p),
        &sys.z,
        iterations,
        None,
        |it, a| {
            if err.is_some() {
                return;
            }
            let tm = match test {
                Some(ts) => match test_rmse(kernel, &sys.centers, a, ts) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        err = Some(e);
                        None
                    }
                },
                None => None,
            };
            trace.points.push(IterPoint {
                iteration: it,
                objective: sys.objective(a, train.labels()),
                test_metric: tm,
                seconds: start.elapsed().as_secs_f64(),
            });
        },
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok((make_model(&sys.centers, &alpha, kernel), trace))
}
