//! Numeric verification helpers: the condition number of the preconditioned
//! system W, the empirical effective dimension, the in-sample N-infinity
//! proxy, and the sufficient-M formulas with their implied condition target.

use ndarray::Array2;

use crate::baselines::DEFAULT_DENSE_CAP;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{kernel_cross, kernel_square, max_diag, KernelSpec};
use crate::linalg::sym_eig;
use crate::precond::PreconditionerFactors;
use crate::sampling::exact_leverage_scores;

/// Key theory-side quantities for one trained problem.
#[derive(Debug, Clone)]
pub struct TheoryReport {
    pub cond_w: f64,
    /// Convergence rate exponent `nu = ln(1 + 2/(sqrt(cond_w) - 1))`;
    /// infinite when `cond_w == 1`.
    pub nu: f64,
    pub eff_dim: f64,
    pub n_inf_emp: f64,
    pub kappa_sq: f64,
    pub suggested_m_uniform: usize,
    pub suggested_m_leverage: usize,
}

impl TheoryReport {
    /// Key-value text block for reports.
    pub fn to_text(&self) -> String {
        format!(
            "cond_w = {}\nnu = {}\neff_dim = {}\nn_inf_emp = {}\nkappa_sq = {}\nsuggested_m_uniform = {}\nsuggested_m_leverage = {}\n",
            self.cond_w,
            self.nu,
            self.eff_dim,
            self.n_inf_emp,
            self.kappa_sq,
            self.suggested_m_uniform,
            self.suggested_m_leverage,
        )
    }
}

/// Rate exponent implied by a condition number.
pub fn rate_exponent(cond_w: f64) -> f64 {
    let s = cond_w.max(1.0).sqrt();
    if s <= 1.0 {
        f64::INFINITY
    } else {
        (1.0 + 2.0 / (s - 1.0)).ln()
    }
}

/// Condition number of the preconditioned system matrix
/// `W = B'(K_nM' K_nM + lambda n K_MM)B`, formed explicitly (dense,
/// desk scale) and symmetrized before the eigendecomposition.
pub fn condition_number_w(
    train: &Dataset,
    centers: &Array2<f64>,
    factors: &PreconditionerFactors,
    kernel: &KernelSpec,
    lambda: f64,
    dense_cap: usize,
) -> Result<f64> {
    let n = train.n();
    if n > dense_cap {
        return Err(Error::DenseCapExceeded { n, cap: dense_cap });
    }
    let k_nm = kernel_cross(kernel, train, centers.view())?;
    let k_mm = kernel_square(kernel, centers.view())?;
    let b = factors.dense_b()?;
    // form W = (K_nM B)'(K_nM B) + lambda n (G B)'(G B) with G a PSD square
    // root of K_MM, so the explicit matrix stays positive semidefinite under
    // roundoff even when the factors are large
    let s = k_nm.dot(&b);
    let (vals, vecs) = sym_eig(&k_mm)?;
    let mut half = vecs.t().dot(&b);
    for (j, &v) in vals.iter().enumerate() {
        let r = v.max(0.0).sqrt();
        half.row_mut(j).mapv_inplace(|x| x * r);
    }
    let w = &s.t().dot(&s) + &(half.t().dot(&half) * (lambda * n as f64));
    let (vals, _) = sym_eig(&w)?;
    let hi = vals[0];
    let lo = vals[vals.len() - 1];
    if !(lo > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "preconditioned system is numerically singular (smallest eigenvalue {lo})"
        )));
    }
    Ok((hi / lo).max(1.0))
}

/// Empirical effective dimension `tr(K_nn (K_nn + lambda n I)^{-1})`,
/// equal to the sum of the exact leverage scores.
pub fn effective_dimension(k_nn: &Array2<f64>, lambda: f64) -> Result<f64> {
    let ls = exact_leverage_scores(k_nn, lambda)?;
    Ok(ls.scores.iter().sum())
}

/// In-sample proxy for N-infinity: `n * max_i l_i` over the exact leverage
/// scores.
pub fn n_infinity_empirical(k_nn: &Array2<f64>, lambda: f64) -> Result<f64> {
    let ls = exact_leverage_scores(k_nn, lambda)?;
    let max = ls.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(k_nn.nrows() as f64 * max)
}

/// Sufficient number of uniform Nystrom centers:
/// `ceil(5 [1 + 14 kappa^2/lambda] ln(8 kappa^2/(lambda delta)))`.
pub fn suggested_m_uniform(lambda: f64, kappa_sq: f64, delta: f64) -> Result<usize> {
    check_domain(lambda, kappa_sq, delta)?;
    let v = 5.0 * (1.0 + 14.0 * kappa_sq / lambda) * (8.0 * kappa_sq / (lambda * delta)).ln();
    Ok(v.max(1.0).ceil() as usize)
}

/// Sufficient number of leverage-sampled Nystrom centers:
/// `ceil(215 [2 + q^2 N(lambda)] ln(8 kappa^2/(lambda delta)))`.
pub fn suggested_m_leverage(
    lambda: f64,
    eff_dim: f64,
    q_factor: f64,
    kappa_sq: f64,
    delta: f64,
) -> Result<usize> {
    check_domain(lambda, kappa_sq, delta)?;
    if eff_dim < 0.0 || !(q_factor > 0.0) {
        return Err(Error::InvalidArgument(
            "effective dimension must be >= 0 and q factor > 0".into(),
        ));
    }
    let v = 215.0
        * (2.0 + q_factor * q_factor * eff_dim)
        * (8.0 * kappa_sq / (lambda * delta)).ln();
    Ok(v.max(1.0).ceil() as usize)
}

fn check_domain(lambda: f64, kappa_sq: f64, delta: f64) -> Result<()> {
    if !(lambda > 0.0) || !(kappa_sq > 0.0) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need lambda > 0, kappa^2 > 0, delta in (0, 1]; got {lambda}, {kappa_sq}, {delta}"
        )));
    }
    Ok(())
}

/// Assemble a full theory report for one trained problem (dense, desk
/// scale: forms K_nn and W explicitly).
pub fn theory_report(
    train: &Dataset,
    centers: &Array2<f64>,
    factors: &PreconditionerFactors,
    kernel: &KernelSpec,
    lambda: f64,
    delta: f64,
    q_factor: f64,
) -> Result<TheoryReport> {
    let k_nn = crate::kernels::kernel_full(kernel, train)?;
    let cond_w = condition_number_w(train, centers, factors, kernel, lambda, DEFAULT_DENSE_CAP)?;
    let eff_dim = effective_dimension(&k_nn, lambda)?;
    let n_inf_emp = n_infinity_empirical(&k_nn, lambda)?;
    let kappa_sq = max_diag(kernel, train)?;
    Ok(TheoryReport {
        cond_w,
        nu: rate_exponent(cond_w),
        eff_dim,
        n_inf_emp,
        kappa_sq,
        suggested_m_uniform: suggested_m_uniform(lambda, kappa_sq, delta)?,
        suggested_m_leverage: suggested_m_leverage(lambda, eff_dim, q_factor, kappa_sq, delta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precond::build_full_rank;
    use ndarray::Array1;
    use crate::solver::{build_operator, FalkonConfig};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let feats = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let labels = Array1::from_shape_fn(n, |_| rng.random::<f64>());
        Dataset::from_dense(feats, labels).unwrap()
    }

    fn random_psd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let g = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        g.t().dot(&g)
    }

    #[test]
    fn cond_w_is_one_at_full_centers() {
        let ds = random_dataset(40, 2, 1);
        let kernel = KernelSpec::Gaussian { sigma: 0.3 };
        let lambda = 1e-3;
        let config = FalkonConfig::new(kernel.clone(), lambda, ds.n(), 5);
        let op = build_operator(&ds, &config).unwrap();
        let cond = condition_number_w(&ds, &op.centers, &op.factors, &kernel, lambda, 100).unwrap();
        assert!(cond >= 1.0);
        assert!(cond <= 1.0 + 1e-6, "cond {cond}");
    }

    #[test]
    fn cond_w_identity_kernel_closed_form() {
        // orthonormal rows under the linear kernel give K = I, so both the
        // Nystrom system and the preconditioner are diagonal and W is a
        // multiple of the identity
        let n = 6;
        let feats = Array2::eye(n);
        let ds = Dataset::from_dense(feats, Array1::zeros(n)).unwrap();
        let lambda = 0.25;
        let config = FalkonConfig::new(KernelSpec::Linear, lambda, n, 3);
        let op = build_operator(&ds, &config).unwrap();
        let cond =
            condition_number_w(&ds, &op.centers, &op.factors, &KernelSpec::Linear, lambda, 100)
                .unwrap();
        assert!((cond - 1.0).abs() < 1e-10, "cond {cond}");
    }

    #[test]
    fn cond_w_refuses_over_cap() {
        let ds = random_dataset(30, 2, 2);
        let kernel = KernelSpec::Linear;
        let config = FalkonConfig::new(kernel.clone(), 0.1, 10, 3);
        let op = build_operator(&ds, &config).unwrap();
        assert!(matches!(
            condition_number_w(&ds, &op.centers, &op.factors, &kernel, 0.1, 10),
            Err(Error::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn cond_w_weakly_decreases_with_m() {
        // median over seeds of cond(W) should not increase as M grows
        let kernel = KernelSpec::Gaussian { sigma: 0.4 };
        let lambda = 1e-2;
        let ms = [10usize, 25, 50, 100];
        let mut medians = Vec::new();
        for &m in &ms {
            let mut conds = Vec::new();
            for seed in 0..5u64 {
                let ds = random_dataset(100, 2, 40 + seed);
                let mut config = FalkonConfig::new(kernel.clone(), lambda, m, 3);
                config.seed = seed;
                let op = build_operator(&ds, &config).unwrap();
                conds.push(
                    condition_number_w(&ds, &op.centers, &op.factors, &kernel, lambda, 200)
                        .unwrap(),
                );
            }
            conds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(conds[2]);
        }
        for w in medians.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "medians {medians:?}");
        }
    }

    #[test]
    fn effective_dimension_identity_kernel() {
        let n = 20;
        let eye: Array2<f64> = Array2::eye(n);
        let lambda = 0.1;
        let ed = effective_dimension(&eye, lambda).unwrap();
        let expect = n as f64 / (1.0 + lambda * n as f64);
        assert!((ed - expect).abs() < 1e-12);
    }

    #[test]
    fn effective_dimension_small_lambda_approaches_rank() {
        let n = 12;
        let g = random_psd(n, 3);
        let trace: f64 = (0..n).map(|i| g[[i, i]]).sum();
        let lambda = 1e-12 * trace / n as f64;
        let ed = effective_dimension(&g, lambda).unwrap();
        assert!((ed - n as f64).abs() < 0.01, "eff dim {ed}");
    }

    #[test]
    fn effective_dimension_monotone_in_lambda() {
        let g = random_psd(15, 4);
        let mut prev = f64::INFINITY;
        for &lambda in &[1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let ed = effective_dimension(&g, lambda).unwrap();
            assert!(ed < prev);
            assert!(ed > 0.0 && ed < 15.0);
            prev = ed;
        }
    }

    #[test]
    fn effective_dimension_equals_leverage_sum() {
        let g = random_psd(18, 5);
        let lambda = 0.05;
        let ed = effective_dimension(&g, lambda).unwrap();
        let ls = exact_leverage_scores(&g, lambda).unwrap();
        let sum: f64 = ls.scores.iter().sum();
        assert!((ed - sum).abs() < 1e-8);
    }

    #[test]
    fn n_infinity_identity_and_bound() {
        let n = 16;
        let eye: Array2<f64> = Array2::eye(n);
        let lambda = 0.2;
        let v = n_infinity_empirical(&eye, lambda).unwrap();
        let expect = n as f64 / (1.0 + lambda * n as f64);
        assert!((v - expect).abs() < 1e-12);

        let g = random_psd(14, 6);
        let kappa_sq = (0..14).map(|i| g[[i, i]]).fold(f64::NEG_INFINITY, f64::max);
        for &lambda in &[1e-3, 1e-1, 1.0] {
            let v = n_infinity_empirical(&g, lambda).unwrap();
            let ed = effective_dimension(&g, lambda).unwrap();
            assert!(v <= kappa_sq / lambda + 1e-9);
            assert!(v >= ed - 1e-9);
        }
    }

    #[test]
    fn suggested_m_frozen_values() {
        assert_eq!(suggested_m_uniform(1.0, 1.0, 1.0).unwrap(), 156);
        assert_eq!(suggested_m_uniform(0.01, 1.0, 0.1).unwrap(), 62_956);
        assert_eq!(suggested_m_leverage(1.0, 0.0, 1.0, 1.0, 1.0).unwrap(), 895);
    }

    #[test]
    fn suggested_m_domain_errors() {
        assert!(suggested_m_uniform(0.0, 1.0, 0.5).is_err());
        assert!(suggested_m_uniform(1.0, 1.0, 1.5).is_err());
        assert!(suggested_m_leverage(1.0, -1.0, 1.0, 1.0, 0.5).is_err());
        assert!(suggested_m_leverage(1.0, 1.0, 0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn rate_exponent_limits() {
        assert!(rate_exponent(1.0).is_infinite());
        let nu = rate_exponent(16.0);
        // ln(1 + 2/3)
        assert!((nu - (1.0f64 + 2.0 / 3.0).ln()).abs() < 1e-14);
        assert!(rate_exponent(100.0) < rate_exponent(4.0));
    }

    #[test]
    fn theory_report_smoke() {
        let ds = random_dataset(30, 2, 7);
        let kernel = KernelSpec::Gaussian { sigma: 1.0 };
        let lambda = 0.05;
        let config = FalkonConfig::new(kernel.clone(), lambda, 10, 3);
        let op = build_operator(&ds, &config).unwrap();
        let rep =
            theory_report(&ds, &op.centers, &op.factors, &kernel, lambda, 0.1, 1.0).unwrap();
        assert!(rep.cond_w >= 1.0);
        assert!(rep.eff_dim > 0.0 && rep.eff_dim < 30.0);
        assert!((rep.kappa_sq - 1.0).abs() < 1e-12);
        let text = rep.to_text();
        assert!(text.contains("cond_w = "));
        assert!(text.contains("suggested_m_leverage = "));
    }

    #[test]
    fn full_rank_build_then_cond_matches_operator_route() {
        // building the preconditioner directly from K_MM gives the same W
        // conditioning as the operator route
        let ds = random_dataset(35, 2, 8);
        let kernel = KernelSpec::Gaussian { sigma: 0.8 };
        let lambda = 1e-2;
        let idx: Vec<usize> = (0..12).collect();
        let centers = ds.dense_rows(&idx);
        let k_mm = kernel_square(&kernel, centers.view()).unwrap();
        let f = build_full_rank(&k_mm, lambda, ds.n()).unwrap();
        let c1 = condition_number_w(&ds, &centers, &f, &kernel, lambda, 100).unwrap();
        assert!(c1 >= 1.0 && c1.is_finite());
    }
}
