//! Seeded synthetic dataset generators: regression targets that are linear
//! combinations of kernel functions (so the truth lives in the model's
//! hypothesis space), controllable label noise, an ill-conditioned problem
//! family for preconditioning comparisons, and two-blob classification.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::data::Dataset;
use crate::error::Result;
use crate::kernels::{kernel_cross, KernelSpec};

/// Parameters for the kernel-target regression generator.
#[derive(Debug, Clone)]
pub struct SynthRegression {
    pub n: usize,
    pub d: usize,
    pub kernel: KernelSpec,
    /// Number of anchor functions the target combines.
    pub num_anchors: usize,
    /// Standard deviation of additive Gaussian label noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthRegression {
    pub fn new(n: usize, d: usize, kernel: KernelSpec, seed: u64) -> Self {
        SynthRegression { n, d, kernel, num_anchors: 10.min(n), noise: 0.1, seed }
    }

    /// Generate the dataset: features uniform in [-1, 1]^d, labels
    /// `sum_j c_j K(x, a_j) + noise`.
    pub fn generate(&self) -> Result<Dataset> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(self.seed);
        let feats =
            Array2::from_shape_fn((self.n, self.d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let anchors = Array2::from_shape_fn((self.num_anchors, self.d), |_| {
            rng.random::<f64>() * 2.0 - 1.0
        });
        let coeffs = Array1::from_shape_fn(self.num_anchors, |_| rng.random::<f64>() * 2.0 - 1.0);
        let ds = Dataset::from_dense(feats, Array1::zeros(self.n))?;
        let k = kernel_cross(&self.kernel, &ds, anchors.view())?;
        let clean = k.dot(&coeffs);
        let labels = Array1::from_shape_fn(self.n, |i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            clean[i] + self.noise * e
        });
        Dataset::from_dense(ds.dense_rows(&(0..self.n).collect::<Vec<_>>()), labels)
    }
}

/// An ill-conditioned regression family: 1-D inputs with a wide Gaussian
/// kernel give a fast-decaying kernel spectrum, so the Nystrom system's
/// effective condition number at small lambda exceeds 1e6. Returns the
/// dataset and the (kernel, lambda) pair that realizes it.
pub fn ill_conditioned_regression(
    n: usize,
    seed: u64,
) -> Result<(Dataset, KernelSpec, f64)> {
    let kernel = KernelSpec::Gaussian { sigma: 0.75 };
    let lambda = 1e-8;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let feats = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 2.0 - 1.0);
    // smooth target plus a rough component so the low-order modes do not
    // carry all the signal
    let labels = Array1::from_shape_fn(n, |i| {
        let x = feats[[i, 0]];
        let e: f64 = StandardNormal.sample(&mut rng);
        (3.0 * x).sin() + 0.5 * (20.0 * x).sin() + 0.01 * e
    });
    Ok((Dataset::from_dense(feats, labels)?, kernel, lambda))
}

/// Two Gaussian blobs with +/-1 labels, roughly balanced.
pub fn two_blob_classification(n: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut feats = Array2::zeros((n, d));
    let mut labels = Array1::zeros(n);
    for i in 0..n {
        let positive = rng.random::<bool>();
        let center = if positive { separation / 2.0 } else { -separation / 2.0 };
        for j in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            feats[[i, j]] = center + e;
        }
        labels[i] = if positive { 1.0 } else { -1.0 };
    }
    Dataset::from_dense(feats, labels)
}
