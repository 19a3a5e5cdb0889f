//! FALKON: Nystrom kernel ridge regression with a Cholesky-based
//! preconditioner solved by conjugate gradient.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod precond;
pub mod sampling;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
