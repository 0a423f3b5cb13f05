//! Fairness-regularized kernel regression.
//!
//! Kernel ridge regression with an HSIC or NOCCO dependence penalty against
//! sensitive variables, the equivalent Gaussian-process model with a
//! modified prior, synthetic bias-injection datasets, and an experiment
//! runner that produces error-vs-dependence tradeoff curves.

pub mod cli;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod fair_gp;
pub mod fair_krr;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod nfkl;

pub use error::{FairError, Result};
pub use kernels::{center_gram, centering_matrix, gram, gram_self, median_heuristic, GramMatrix, KernelSpec};
