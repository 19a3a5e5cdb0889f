//! Dense factorizations and the conjugate gradient core.
//!
//! Everything here operates on `ndarray` matrices and is self-contained:
//! upper Cholesky (blocked above order 64), triangular solves, Householder
//! QR with column pivoting, cyclic Jacobi symmetric eigendecomposition, and
//! fixed-iteration conjugate gradient.

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Upper-triangular factor with strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperTriangular {
    m: Array2<f64>,
}

impl UpperTriangular {
    pub fn order(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.m.view()
    }

    /// Wrap an upper-triangular matrix, checking shape and diagonal.
    pub fn new(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch("triangular factor must be square".into()));
        }
        for i in 0..m.nrows() {
            if !(m[[i, i]] > 0.0) {
                return Err(Error::SingularTriangular { index: i });
            }
            for j in 0..i {
                if m[[i, j]] != 0.0 {
                    return Err(Error::InvalidArgument(
                        "nonzero entry below the diagonal".into(),
                    ));
                }
            }
        }
        Ok(UpperTriangular { m })
    }
}

/// Whether a triangular solve uses R or its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriMode {
    /// Solve R x = b (back substitution).
    Upper,
    /// Solve R^T x = b (forward substitution on the transposed factor).
    Transpose,
}

const CHOL_BLOCK: usize = 64;

/// Upper Cholesky factorization: R with R^T R = S.
///
/// Unblocked at order <= 64, right-looking blocked above so the trailing
/// update runs through matrix-matrix products.
pub fn cholesky_upper(s_mat: &Array2<f64>) -> Result<UpperTriangular> {
    let m = s_mat.nrows();
    if s_mat.ncols() != m {
        return Err(Error::DimensionMismatch("cholesky needs a square matrix".into()));
    }
    let mut r = s_mat.clone();
    // zero the strict lower triangle; we only ever read/write the upper part
    for i in 0..m {
        for j in 0..i {
            r[[i, j]] = 0.0;
        }
    }
    let mut k = 0;
    while k < m {
        let e = (k + CHOL_BLOCK).min(m);
        chol_unblocked(&mut r, k, e)?;
        if e < m {
            // panel solve: R_kk^T * X = S[k..e, e..m]
            for col in e..m {
                for row in k..e {
                    let mut v = r[[row, col]];
                    for t in k..row {
                        v -= r[[t, row]] * r[[t, col]];
                    }
                    r[[row, col]] = v / r[[row, row]];
                }
            }
            // trailing update: S[e.., e..] -= panel^T panel
            let panel = r.slice(s![k..e, e..m]).to_owned();
            let update = panel.t().dot(&panel);
            let mut trailing = r.slice_mut(s![e..m, e..m]);
            trailing -= &update;
        }
        k = e;
    }
    // trailing updates touch the lower triangle of later blocks; clear it
    for i in 0..m {
        for j in 0..i {
            r[[i, j]] = 0.0;
        }
    }
    Ok(UpperTriangular { m: r })
}

fn chol_unblocked(r: &mut Array2<f64>, k: usize, e: usize) -> Result<()> {
    for i in k..e {
        let mut d = r[[i, i]];
        for t in k..i {
            d -= r[[t, i]] * r[[t, i]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: i });
        }
        let d = d.sqrt();
        r[[i, i]] = d;
        for j in (i + 1)..e {
            let mut v = r[[i, j]];
            for t in k..i {
                v -= r[[t, i]] * r[[t, j]];
            }
            r[[i, j]] = v / d;
        }
    }
    Ok(())
}

/// Solve R x = b or R^T x = b for a vector right-hand side.
pub fn tri_solve(r: &UpperTriangular, b: &Array1<f64>, mode: TriMode) -> Result<Array1<f64>> {
    let m = r.order();
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "rhs length {} vs order {m}",
            b.len()
        )));
    }
    let rm = &r.m;
    let mut x = b.clone();
    match mode {
        TriMode::Upper => {
            for i in (0..m).rev() {
                let mut v = x[i];
                for j in (i + 1)..m {
                    v -= rm[[i, j]] * x[j];
                }
                x[i] = v / rm[[i, i]];
            }
        }
        TriMode::Transpose => {
            for i in 0..m {
                let mut v = x[i];
                for j in 0..i {
                    v -= rm[[j, i]] * x[j];
                }
                x[i] = v / rm[[i, i]];
            }
        }
    }
    Ok(x)
}

/// Column-wise triangular solve for a matrix right-hand side.
pub fn tri_solve_mat(r: &UpperTriangular, b: &Array2<f64>, mode: TriMode) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(b.dim());
    for j in 0..b.ncols() {
        let col = tri_solve(r, &b.column(j).to_owned(), mode)?;
        out.column_mut(j).assign(&col);
    }
    Ok(out)
}

/// Rectangular matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialIsometry {
    q: Array2<f64>,
}

impl PartialIsometry {
    pub fn identity(m: usize) -> Self {
        PartialIsometry { q: Array2::eye(m) }
    }

    pub fn new(q: Array2<f64>) -> Result<Self> {
        let k = q.ncols();
        let gram = q.t().dot(&q);
        let mut dev: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((gram[[i, j]] - target).abs());
            }
        }
        if dev > 1e-10 * (k.max(1) as f64) {
            return Err(Error::InvalidArgument(format!(
                "columns not orthonormal (deviation {dev:.3e})"
            )));
        }
        Ok(PartialIsometry { q })
    }

    pub fn rows(&self) -> usize {
        self.q.nrows()
    }

    pub fn cols(&self) -> usize {
        self.q.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.q.view()
    }

    pub fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        self.q.dot(v)
    }

    pub fn apply_t(&self, v: &Array1<f64>) -> Array1<f64> {
        self.q.t().dot(v)
    }
}

/// Result of a rank-revealing QR factorization: `S[:, perm] = Q * R` with
/// `Q` M-by-q orthonormal and `R` q-by-M upper trapezoidal.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    pub q: PartialIsometry,
    pub r: Array2<f64>,
    pub rank: usize,
    pub perm: Vec<usize>,
}

/// Householder QR with column pivoting. The numerical rank is the number of
/// diagonal entries of R exceeding `rank_tol * |R_11|`.
pub fn pivoted_qr(s_mat: &Array2<f64>, rank_tol: f64) -> Result<PivotedQr> {
    let m = s_mat.nrows();
    if s_mat.ncols() != m {
        return Err(Error::DimensionMismatch("pivoted_qr needs a square matrix".into()));
    }
    let mut a = s_mat.clone();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut taus = vec![0.0f64; m];
    let mut steps = 0usize;
    for k in 0..m {
        // recompute trailing column norms each step; cheap at desk scale and
        // immune to downdating cancellation
        let mut best = k;
        let mut best_norm = 0.0;
        for j in k..m {
            let nrm: f64 = (k..m).map(|i| a[[i, j]] * a[[i, j]]).sum();
            if nrm > best_norm {
                best_norm = nrm;
                best = j;
            }
        }
        if best_norm == 0.0 {
            break;
        }
        if best != k {
            perm.swap(k, best);
            for i in 0..m {
                let tmp = a[[i, k]];
                a[[i, k]] = a[[i, best]];
                a[[i, best]] = tmp;
            }
        }
        // Householder vector for column k
        let alpha = a[[k, k]];
        let norm = best_norm.sqrt();
        let beta = if alpha >= 0.0 { -norm } else { norm };
        let v0 = alpha - beta;
        let mut vnorm2 = v0 * v0;
        for i in (k + 1)..m {
            vnorm2 += a[[i, k]] * a[[i, k]];
        }
        if vnorm2 == 0.0 {
            taus[k] = 0.0;
            steps = k + 1;
            continue;
        }
        let tau = 2.0 * v0 * v0 / vnorm2;
        // store normalized v (v0 scaled to 1) below the diagonal
        a[[k, k]] = beta;
        for i in (k + 1)..m {
            a[[i, k]] /= v0;
        }
        taus[k] = tau;
        // apply reflector to trailing columns
        for j in (k + 1)..m {
            let mut dot = a[[k, j]];
            for i in (k + 1)..m {
                dot += a[[i, k]] * a[[i, j]];
            }
            dot *= tau;
            a[[k, j]] -= dot;
            for i in (k + 1)..m {
                let aik = a[[i, k]];
                a[[i, j]] -= dot * aik;
            }
        }
        steps = k + 1;
    }
    // numerical rank from the diagonal of R
    let r11 = a[[0, 0]].abs();
    let mut rank = 0;
    for i in 0..steps {
        if a[[i, i]].abs() > rank_tol * r11 {
            rank += 1;
        } else {
            break;
        }
    }
    // R: first `rank` rows of the upper trapezoid
    let mut r = Array2::zeros((rank, m));
    for i in 0..rank {
        for j in i..m {
            r[[i, j]] = a[[i, j]];
        }
    }
    // Q: apply the reflectors to the first `rank` columns of the identity
    let mut q = Array2::zeros((m, rank));
    for j in 0..rank {
        q[[j, j]] = 1.0;
    }
    for k in (0..steps).rev() {
        if taus[k] == 0.0 {
            continue;
        }
        for j in 0..rank {
            let mut dot = q[[k, j]];
            for i in (k + 1)..m {
                dot += a[[i, k]] * q[[i, j]];
            }
            dot *= taus[k];
            q[[k, j]] -= dot;
            for i in (k + 1)..m {
                let aik = a[[i, k]];
                q[[i, j]] -= dot * aik;
            }
        }
    }
    Ok(PivotedQr { q: PartialIsometry::new(q)?, r, rank, perm })
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as columns.
pub fn sym_eig(s_mat: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let m = s_mat.nrows();
    if s_mat.ncols() != m {
        return Err(Error::DimensionMismatch("sym_eig needs a square matrix".into()));
    }
    let mut a = s_mat.clone();
    // symmetrize to absorb round-off asymmetry in the input
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    let mut v = Array2::eye(m);
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-15 * frob.max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off: f64 = 0.0;
        for p in 0..m {
            for q in (p + 1)..m {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..m {
            for q in (p + 1)..m {
                let apq = a[[p, q]];
                if apq.abs() <= tol / (m as f64) {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..m {
                    let aip = a[[i, p]];
                    let aiq = a[[i, q]];
                    a[[i, p]] = c * aip - s * aiq;
                    a[[i, q]] = s * aip + c * aiq;
                }
                for j in 0..m {
                    let apj = a[[p, j]];
                    let aqj = a[[q, j]];
                    a[[p, j]] = c * apj - s * aqj;
                    a[[q, j]] = s * apj + c * aqj;
                }
                for i in 0..m {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());
    let vals = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vecs = Array2::zeros((m, m));
    for (col, &i) in order.iter().enumerate() {
        vecs.column_mut(col).assign(&v.column(i));
    }
    Ok((vals, vecs))
}

/// Fixed-iteration conjugate gradient from a zero initial iterate.
///
/// Runs exactly `t_max` iterations of the classic update sequence unless the
/// residual hits exact zero (the system is solved) or `tol` is set and the
/// relative residual drops below it.
pub fn conjugate_gradient<F>(apply_op: F, rhs: &Array1<f64>, t_max: usize) -> Result<Array1<f64>>
where
    F: FnMut(&Array1<f64>) -> Array1<f64>,
{
    conjugate_gradient_traced(apply_op, rhs, t_max, None, |_, _| {})
}

/// Conjugate gradient with an optional residual stop and a per-iteration
/// callback receiving `(iteration, current iterate)`.
pub fn conjugate_gradient_traced<F, C>(
    mut apply_op: F,
    rhs: &Array1<f64>,
    t_max: usize,
    tol: Option<f64>,
    mut on_iterate: C,
) -> Result<Array1<f64>>
where
    F: FnMut(&Array1<f64>) -> Array1<f64>,
    C: FnMut(usize, &Array1<f64>),
{
    let mut beta = Array1::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rsold = r.dot(&r);
    let rs0 = rsold;
    for it in 1..=t_max {
        if rsold == 0.0 {
            break;
        }
        let ap = apply_op(&p);
        let denom = p.dot(&ap);
        let a = rsold / denom;
        if !a.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        beta.scaled_add(a, &p);
        r.scaled_add(-a, &ap);
        let rsnew = r.dot(&r);
        if !rsnew.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        p = &r + &(&p * (rsnew / rsold));
        rsold = rsnew;
        on_iterate(it, &beta);
        if let Some(tol) = tol {
            if rsold <= tol * tol * rs0 {
                break;
            }
        }
    }
    Ok(beta)
}
