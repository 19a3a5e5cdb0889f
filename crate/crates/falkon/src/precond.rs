//! The FALKON preconditioner `B = (1/sqrt(n)) D Q T^{-1} A^{-1}`.
//!
//! Full-rank fast path: `T = chol(D K_MM D + eps*M*I)`,
//! `A = chol(T T'/M + lambda I)`, with `Q = I` (and `D = I` under uniform
//! sampling, skipping the QR entirely). Rank-deficient path: pivoted QR or
//! eigendecomposition of `D K_MM D` yields a partial isometry `Q` and a
//! triangular `T` with `Q T' T Q' = D K_MM D`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_upper, pivoted_qr, sym_eig, tri_solve, PartialIsometry, TriMode, UpperTriangular,
};

/// Which construction produced the factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondPath {
    FullRank,
    PivotedQr,
    Eigendecomposition,
}

/// Backend for the rank-deficient construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankDeficientBackend {
    #[default]
    PivotedQr,
    Eigendecomposition,
}

/// Factors defining `B = (1/sqrt(n)) D Q T^{-1} A^{-1}`.
#[derive(Debug, Clone)]
pub struct PreconditionerFactors {
    pub n: usize,
    pub m: usize,
    pub rank: usize,
    pub d_diag: Array1<f64>,
    pub q: PartialIsometry,
    pub t: UpperTriangular,
    pub a: UpperTriangular,
    pub lambda: f64,
    pub jitter: f64,
    pub path: PrecondPath,
}

impl PreconditionerFactors {
    /// `D Q T^{-1} A^{-1} u` without the `1/sqrt(n)` scale; the solver folds
    /// that factor into its right-hand side.
    pub fn apply_unscaled(&self, u: &Array1<f64>) -> Result<Array1<f64>> {
        let c = tri_solve(&self.a, u, TriMode::Upper)?;
        let h = tri_solve(&self.t, &c, TriMode::Upper)?;
        let g = self.q.apply(&h);
        Ok(&g * &self.d_diag)
    }

    /// Transpose of [`Self::apply_unscaled`]: `A^{-T} T^{-T} Q^T D v`.
    pub fn apply_unscaled_t(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        let dv = v * &self.d_diag;
        let z = self.q.apply_t(&dv);
        let s = tri_solve(&self.t, &z, TriMode::Transpose)?;
        tri_solve(&self.a, &s, TriMode::Transpose)
    }

    /// `B beta = (1/sqrt(n)) D Q T^{-1} A^{-1} beta`.
    pub fn apply_b(&self, beta: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.apply_unscaled(beta)? / (self.n as f64).sqrt())
    }

    /// `B^T v = (1/sqrt(n)) A^{-T} T^{-T} Q^T D v`.
    pub fn apply_bt(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.apply_unscaled_t(v)? / (self.n as f64).sqrt())
    }

    /// The dense M-by-q matrix B (desk scale; diagnostics and oracles).
    pub fn dense_b(&self) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.m, self.rank));
        for j in 0..self.rank {
            let mut e = Array1::zeros(self.rank);
            e[j] = 1.0;
            out.column_mut(j).assign(&self.apply_b(&e)?);
        }
        Ok(out)
    }
}

/// Machine-epsilon jitter scaled by M, added to the kernel diagonal before
/// Cholesky.
pub fn default_jitter(m: usize) -> f64 {
    f64::EPSILON * m as f64
}

/// Full-rank fast path. Falls through to the pivoted-QR construction when
/// the jittered Cholesky fails (recorded in the returned `path`).
pub fn build_full_rank(
    k_mm: &Array2<f64>,
    lambda: f64,
    n: usize,
) -> Result<PreconditionerFactors> {
    build_with_d(k_mm, None, lambda, n, RankDeficientBackend::PivotedQr)
}

/// Generalized build with an explicit diagonal D and a chosen backend.
pub fn build_rank_deficient(
    k_mm: &Array2<f64>,
    d_diag: &Array1<f64>,
    lambda: f64,
    n: usize,
    backend: RankDeficientBackend,
) -> Result<PreconditionerFactors> {
    build_with_d(k_mm, Some(d_diag), lambda, n, backend)
}

/// Build the preconditioner, trying the Cholesky fast path first when D is
/// absent (uniform sampling) and falling back to the generalized
/// construction on failure.
pub fn build_with_d(
    k_mm: &Array2<f64>,
    d_diag: Option<&Array1<f64>>,
    lambda: f64,
    n: usize,
    backend: RankDeficientBackend,
) -> Result<PreconditionerFactors> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    let m = k_mm.nrows();
    if k_mm.ncols() != m {
        return Err(Error::DimensionMismatch("K_MM must be square".into()));
    }
    let identity_d = Array1::ones(m);
    let d = d_diag.unwrap_or(&identity_d);
    if d.len() != m || d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "D must be a strictly positive diagonal of length M".into(),
        ));
    }
    let jitter = default_jitter(m);
    let dkd = scale_sym(k_mm, d);

    if d_diag.is_none() {
        // fast path: T = chol(K_MM + eps*M*I), Q = I, D = I
        let mut shifted = dkd.clone();
        for i in 0..m {
            shifted[[i, i]] += jitter;
        }
        if let Ok(t) = cholesky_upper(&shifted) {
            let a = chol_a(&t, lambda, m)?;
            return Ok(PreconditionerFactors {
                n,
                m,
                rank: m,
                d_diag: identity_d,
                q: PartialIsometry::identity(m),
                t,
                a,
                lambda,
                jitter,
                path: PrecondPath::FullRank,
            });
        }
    }

    match backend {
        RankDeficientBackend::PivotedQr => {
            let qr = pivoted_qr(&dkd, 1e-10)?;
            if qr.rank == 0 {
                return Err(Error::DegenerateCenters);
            }
            // T = chol(Q' D K_MM D Q), a q-by-q SPD projection of DKD
            let qm = qr.q.matrix();
            let projected = qm.t().dot(&dkd).dot(&qm);
            let mut shifted = projected.clone();
            for i in 0..qr.rank {
                shifted[[i, i]] += jitter;
            }
            let t = cholesky_upper(&shifted)?;
            let a = chol_a(&t, lambda, m)?;
            Ok(PreconditionerFactors {
                n,
                m,
                rank: qr.rank,
                d_diag: d.clone(),
                q: qr.q,
                t,
                a,
                lambda,
                jitter,
                path: PrecondPath::PivotedQr,
            })
        }
        RankDeficientBackend::Eigendecomposition => {
            let (vals, vecs) = sym_eig(&dkd)?;
            let tol = 1e-10 * vals[0].max(0.0);
            let rank = vals.iter().take_while(|&&v| v > tol).count();
            if rank == 0 {
                return Err(Error::DegenerateCenters);
            }
            let q = PartialIsometry::new(vecs.slice(ndarray::s![.., ..rank]).to_owned())?;
            let t_diag = Array1::from_iter(vals.iter().take(rank).map(|v| v.sqrt()));
            let t = UpperTriangular::new(Array2::from_diag(&t_diag))?;
            let a_diag = Array1::from_iter(
                vals.iter().take(rank).map(|v| (lambda + v / m as f64).sqrt()),
            );
            let a = UpperTriangular::new(Array2::from_diag(&a_diag))?;
            Ok(PreconditionerFactors {
                n,
                m,
                rank,
                d_diag: d.clone(),
                q,
                t,
                a,
                lambda,
                jitter: 0.0,
                path: PrecondPath::Eigendecomposition,
            })
        }
    }
}

fn scale_sym(k: &Array2<f64>, d: &Array1<f64>) -> Array2<f64> {
    let m = k.nrows();
    let mut out = k.clone();
    for i in 0..m {
        for j in 0..m {
            out[[i, j]] *= d[i] * d[j];
        }
    }
    out
}

fn chol_a(t: &UpperTriangular, lambda: f64, m: usize) -> Result<UpperTriangular> {
    let tm = t.matrix();
    let mut gram = tm.dot(&tm.t()) / m as f64;
    for i in 0..t.order() {
        gram[[i, i]] += lambda;
    }
    cholesky_upper(&gram)
}
