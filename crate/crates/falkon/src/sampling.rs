//! Nystrom center selection: uniform sampling without replacement, exact
//! leverage scores, and leverage-score sampling with replacement collapsed to
//! (index, count) pairs with the matching diagonal reweighting D.
//!
//! All sampling uses xoshiro256++ seeded from a caller-provided u64, the same
//! generator family as the data splits.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_upper, tri_solve_mat, TriMode};

/// How the centers were chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingScheme {
    Uniform,
    Leverage { lambda: f64, q_factor: f64 },
}

/// The kept (unique) Nystrom centers together with their multiplicities and
/// the diagonal reweighting D.
///
/// Under uniform sampling all counts are 1 and D is the identity. Under
/// leverage sampling, M draws with replacement collapse to unique indices
/// and `d_diag[j] = sqrt(1 / (n * p_{i_j} * count_j))`.
#[derive(Debug, Clone)]
pub struct CenterSelection {
    pub source_indices: Vec<usize>,
    pub counts: Vec<usize>,
    pub d_diag: Vec<f64>,
    pub scheme: SamplingScheme,
    /// Number of draws (sum of counts); equals the number of kept centers
    /// only for uniform sampling.
    pub draws: usize,
}

impl CenterSelection {
    /// Number of kept (unique) centers.
    pub fn num_centers(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.scheme, SamplingScheme::Uniform)
    }

    /// Treat the given rows as centers verbatim (counts 1, D identity).
    pub fn explicit(indices: Vec<usize>) -> Self {
        let m = indices.len();
        CenterSelection {
            source_indices: indices,
            counts: vec![1; m],
            d_diag: vec![1.0; m],
            scheme: SamplingScheme::Uniform,
            draws: m,
        }
    }
}

/// Draw M distinct indices uniformly without replacement from `0..n`.
pub fn sample_uniform(n: usize, m: usize, seed: u64) -> Result<CenterSelection> {
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= M <= n, got M = {m}, n = {n}"
        )));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    indices.truncate(m);
    Ok(CenterSelection {
        source_indices: indices,
        counts: vec![1; m],
        d_diag: vec![1.0; m],
        scheme: SamplingScheme::Uniform,
        draws: m,
    })
}

/// Exact ridge leverage scores with their regularization.
#[derive(Debug, Clone)]
pub struct LeverageScores {
    pub scores: Vec<f64>,
    pub lambda: f64,
}

/// Exact leverage scores `l_i = (K_nn (K_nn + lambda n I)^{-1})_{ii}`,
/// computed as `1 - lambda n ((K_nn + lambda n I)^{-1})_{ii}` through a
/// Cholesky factorization. O(n^3); desk scale only.
pub fn exact_leverage_scores(k_nn: &Array2<f64>, lambda: f64) -> Result<LeverageScores> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    let n = k_nn.nrows();
    let ln = lambda * n as f64;
    let mut shifted = k_nn.clone();
    for i in 0..n {
        shifted[[i, i]] += ln;
    }
    let r = cholesky_upper(&shifted)?;
    // (K + ln I)^{-1}_{ii} = || R^{-T} e_i ||^2
    let cols = tri_solve_mat(&r, &Array2::eye(n), TriMode::Transpose)?;
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let inv_ii = cols.column(i).dot(&cols.column(i));
        scores.push((1.0 - ln * inv_ii).clamp(0.0, 1.0));
    }
    Ok(LeverageScores { scores, lambda })
}

/// Load externally provided approximate leverage scores, one real per line.
pub fn load_scores_file(path: &Path, lambda: f64) -> Result<LeverageScores> {
    let text = std::fs::read_to_string(path)?;
    let mut scores = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: f64 = line.trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad score {:?}", line.trim()),
        })?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "scores must be positive and finite".into(),
            });
        }
        scores.push(v);
    }
    if scores.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no scores".into() });
    }
    Ok(LeverageScores { scores, lambda })
}

/// M draws with replacement from a discrete distribution, collapsed to
/// `(unique indices, counts)` with indices ascending.
pub fn multinomial_counts(
    m: usize,
    probs: &[f64],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("probabilities must be nonnegative".into()));
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("all probabilities are zero".into()));
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    // cumulative inverse-CDF sampling, like histcounts over cumsum(prob)
    let mut cum = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cum.push(acc);
    }
    let last = cum.len() - 1;
    cum[last] = f64::INFINITY; // absorb round-off at the top end
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut counts_full = vec![0usize; probs.len()];
    for _ in 0..m {
        let u: f64 = rng.random::<f64>() * total.min(1.0);
        let idx = cum.partition_point(|&c| c <= u);
        counts_full[idx] += 1;
    }
    let mut indices = Vec::new();
    let mut counts = Vec::new();
    for (i, &c) in counts_full.iter().enumerate() {
        if c > 0 {
            if probs[i] == 0.0 {
                return Err(Error::InvalidArgument(
                    "zero-probability index selected".into(),
                ));
            }
            indices.push(i);
            counts.push(c);
        }
    }
    Ok((indices, counts))
}

/// Select centers by leverage-score sampling: normalize the scores to
/// probabilities, draw M times with replacement, and build D from the counts.
pub fn sample_leverage(
    scores: &LeverageScores,
    m: usize,
    n: usize,
    q_factor: f64,
    seed: u64,
) -> Result<CenterSelection> {
    if scores.scores.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for n = {n}",
            scores.scores.len()
        )));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("need M >= 1".into()));
    }
    let total: f64 = scores.scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("leverage scores sum to zero".into()));
    }
    let probs: Vec<f64> = scores.scores.iter().map(|s| s / total).collect();
    let (indices, counts) = multinomial_counts(m, &probs, seed)?;
    let d_diag: Vec<f64> = indices
        .iter()
        .zip(counts.iter())
        .map(|(&i, &c)| (1.0 / (n as f64 * probs[i] * c as f64)).sqrt())
        .collect();
    Ok(CenterSelection {
        source_indices: indices,
        counts,
        d_diag,
        scheme: SamplingScheme::Leverage { lambda: scores.lambda, q_factor },
        draws: m,
    })
}

/// D as a vector on the kept centers.
pub fn d_as_array(sel: &CenterSelection) -> Array1<f64> {
    Array1::from_vec(sel.d_diag.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn uniform_exhaustive_subset() {
        let sel = sample_uniform(10, 10, 7).unwrap();
        let mut idx = sel.source_indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        assert!(sel.counts.iter().all(|&c| c == 1));
        assert!(sel.d_diag.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn uniform_single_and_determinism() {
        let sel = sample_uniform(100, 1, 3).unwrap();
        assert_eq!(sel.num_centers(), 1);
        assert!(sel.source_indices[0] < 100);
        let again = sample_uniform(100, 1, 3).unwrap();
        assert_eq!(sel.source_indices, again.source_indices);
        let sel2 = sample_uniform(50, 20, 9).unwrap();
        let sel3 = sample_uniform(50, 20, 9).unwrap();
        assert_eq!(sel2.source_indices, sel3.source_indices);
    }

    #[test]
    fn uniform_without_replacement() {
        let sel = sample_uniform(40, 25, 5).unwrap();
        let mut idx = sel.source_indices.clone();
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 25);
    }

    #[test]
    fn uniform_rejects_m_over_n() {
        assert!(sample_uniform(5, 6, 0).is_err());
    }

    #[test]
    fn leverage_scores_identity_kernel() {
        let n = 20;
        let lambda = 0.05;
        let ls = exact_leverage_scores(&Array2::eye(n), lambda).unwrap();
        let expect = 1.0 / (1.0 + lambda * n as f64);
        for &s in &ls.scores {
            assert!((s - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn leverage_scores_large_lambda_vanish() {
        let n = 10;
        let lambda = 1e8 / n as f64; // lambda * n = 1e8
        let ls = exact_leverage_scores(&Array2::eye(n), lambda).unwrap();
        assert!(ls.scores.iter().all(|&s| s < 1e-6));
    }

    #[test]
    fn leverage_scores_diagonal_closed_form() {
        let n = 6;
        let lambda = 0.1;
        let diag: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let k = Array2::from_diag(&Array1::from_vec(diag.clone()));
        let ls = exact_leverage_scores(&k, lambda).unwrap();
        let ln = lambda * n as f64;
        for (i, &s) in ls.scores.iter().enumerate() {
            let expect = diag[i] / (diag[i] + ln);
            assert!((s - expect).abs() < 1e-12, "i={i}: {s} vs {expect}");
        }
    }

    #[test]
    fn leverage_scores_trace_oracle() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(21);
        let n = 30;
        let g = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        let k = g.t().dot(&g);
        let lambda = 0.01;
        let ls = exact_leverage_scores(&k, lambda).unwrap();
        // dense trace oracle: solve (K + ln I) X = K, trace of X
        let ln = lambda * n as f64;
        let mut shifted = k.clone();
        for i in 0..n {
            shifted[[i, i]] += ln;
        }
        let r = cholesky_upper(&shifted).unwrap();
        let y = tri_solve_mat(&r, &k, TriMode::Transpose).unwrap();
        let x = tri_solve_mat(&r, &y, TriMode::Upper).unwrap();
        let trace: f64 = (0..n).map(|i| x[[i, i]]).sum();
        let sum: f64 = ls.scores.iter().sum();
        assert!((sum - trace).abs() < 1e-8, "{sum} vs {trace}");
    }

    #[test]
    fn leverage_rejects_bad_lambda() {
        assert!(exact_leverage_scores(&Array2::eye(3), 0.0).is_err());
        assert!(exact_leverage_scores(&Array2::eye(3), -1.0).is_err());
    }

    #[test]
    fn multinomial_point_mass() {
        let mut probs = vec![0.0; 5];
        probs[0] = 1.0;
        let (idx, counts) = multinomial_counts(17, &probs, 1).unwrap();
        assert_eq!(idx, vec![0]);
        assert_eq!(counts, vec![17]);
    }

    #[test]
    fn multinomial_single_draw() {
        let probs = vec![0.25; 4];
        let (idx, counts) = multinomial_counts(1, &probs, 2).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(counts, vec![1]);
    }

    #[test]
    fn multinomial_all_zero_rejected() {
        assert!(multinomial_counts(3, &[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn multinomial_counts_statistics() {
        // uniform probs, many draws: each count within 5 sigma of M/n
        let n = 10;
        let m = 100_000;
        let probs = vec![1.0 / n as f64; n];
        let (idx, counts) = multinomial_counts(m, &probs, 99).unwrap();
        assert_eq!(idx.len(), n);
        assert_eq!(counts.iter().sum::<usize>(), m);
        let p = 1.0 / n as f64;
        let mean = m as f64 * p;
        let sigma = (m as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - mean).abs() < 5.0 * sigma, "count {c} vs mean {mean}");
        }
    }

    #[test]
    fn leverage_sampling_d_formula() {
        let n = 50;
        let scores = LeverageScores { scores: vec![1.0; n], lambda: 0.1 };
        let sel = sample_leverage(&scores, 30, n, 1.0, 4).unwrap();
        assert_eq!(sel.draws, 30);
        assert_eq!(sel.counts.iter().sum::<usize>(), 30);
        // equal scores: p = 1/n, so d_j = 1/sqrt(count_j)
        for (j, &d) in sel.d_diag.iter().enumerate() {
            let expect = 1.0 / (sel.counts[j] as f64).sqrt();
            assert!((d - expect).abs() < 1e-12);
            // the exact invariant: d^2 * n * p * count = 1
            let p = 1.0 / n as f64;
            assert!((d * d * n as f64 * p * sel.counts[j] as f64 - 1.0).abs() < 1e-12);
        }
        assert!(matches!(sel.scheme, SamplingScheme::Leverage { .. }));
    }

    #[test]
    fn leverage_sampling_dominant_score() {
        let n = 8;
        let mut scores = vec![1e-15; n];
        scores[3] = 1.0;
        let ls = LeverageScores { scores, lambda: 0.1 };
        let m = 20;
        let sel = sample_leverage(&ls, m, n, 1.0, 7).unwrap();
        // the dominant index carries essentially all draws
        let pos = sel.source_indices.iter().position(|&i| i == 3).unwrap();
        assert!(sel.counts[pos] >= m - 1);
        // realized d matches the formula with the realized count
        let total: f64 = ls.scores.iter().sum();
        let p = ls.scores[3] / total;
        let expect = (1.0 / (n as f64 * p * sel.counts[pos] as f64)).sqrt();
        assert!((sel.d_diag[pos] - expect).abs() < 1e-12);
    }

    #[test]
    fn q_factor_perturbation_keeps_d_positive() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(31);
        let n = 40;
        let k = Array2::eye(n);
        let exact = exact_leverage_scores(&k, 0.05).unwrap();
        let q = 2.0;
        let perturbed: Vec<f64> = exact
            .scores
            .iter()
            .map(|&s| s * (1.0 / q + rng.random::<f64>() * (q - 1.0 / q)))
            .collect();
        let ls = LeverageScores { scores: perturbed, lambda: 0.05 };
        let sel = sample_leverage(&ls, 25, n, q, 8).unwrap();
        assert!(sel.d_diag.iter().all(|&d| d > 0.0 && d.is_finite()));
        assert_eq!(sel.counts.iter().sum::<usize>(), 25);
    }
}
