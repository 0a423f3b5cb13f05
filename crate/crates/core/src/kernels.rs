//! Kernel specifications, Gram matrices, centering and bandwidth heuristics.
//!
//! The isotropic RBF uses `exp(-‖x - x'‖² / θ²)` so that an ARD kernel with
//! all lengthscales equal to `θ` is the same function.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FairError, Result};

/// A kernel family together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Rbf { lengthscale: f64 },
    ArdRbf { lengthscales: Vec<f64> },
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64) -> Self {
        KernelSpec::Rbf { lengthscale }
    }

    pub fn ard(lengthscales: Vec<f64>) -> Self {
        KernelSpec::ArdRbf { lengthscales }
    }

    /// Checks lengthscale positivity (and ARD arity when `dim` is given).
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        match self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { lengthscale } => check_lengthscale(*lengthscale),
            KernelSpec::ArdRbf { lengthscales } => {
                if lengthscales.is_empty() {
                    return Err(FairError::InvalidParameter(
                        "ARD kernel needs at least one lengthscale".into(),
                    ));
                }
                lengthscales.iter().try_for_each(|&l| check_lengthscale(l))?;
                if let Some(d) = dim {
                    check_dim("ARD lengthscale count", d, lengthscales.len())?;
                }
                Ok(())
            }
        }
    }

    pub fn is_stationary(&self) -> bool {
        !matches!(self, KernelSpec::Linear)
    }

    /// Kernel value for a single pair of points.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelSpec::Rbf { lengthscale } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (lengthscale * lengthscale)).exp()
            }
            KernelSpec::ArdRbf { lengthscales } => {
                let s: f64 = a
                    .iter()
                    .zip(b)
                    .zip(lengthscales)
                    .map(|((x, y), l)| (x - y) * (x - y) / (l * l))
                    .sum();
                (-s).exp()
            }
        }
    }
}

fn check_lengthscale(l: f64) -> Result<()> {
    if l.is_finite() && l > 0.0 {
        Ok(())
    } else {
        Err(FairError::InvalidParameter(format!(
            "lengthscale must be positive and finite, got {l}"
        )))
    }
}

/// Dense kernel matrix; `symmetric` is set when it was computed on one point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Array2<f64>,
    pub symmetric: bool,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// Cross Gram matrix `k(A_i, B_j)`.
pub fn gram(spec: &KernelSpec, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<GramMatrix> {
    check_dim("gram column count", a.ncols(), b.ncols())?;
    spec.validate(Some(a.ncols()))?;
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(FairError::NonFinite("kernel inputs"));
    }
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        let ai = a.row(i);
        let ai = ai.as_slice().expect("standard layout row");
        for j in 0..m {
            let bj = b.row(j);
            out[[i, j]] = spec.eval(ai, bj.as_slice().expect("standard layout row"));
        }
    }
    Ok(GramMatrix {
        values: out,
        symmetric: false,
    })
}

/// Gram matrix of a point set with itself: upper triangle computed once and mirrored.
pub fn gram_self(spec: &KernelSpec, a: ArrayView2<f64>) -> Result<GramMatrix> {
    spec.validate(Some(a.ncols()))?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(FairError::NonFinite("kernel inputs"));
    }
    let a = a.as_standard_layout();
    let n = a.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let ai = a.row(i);
        let ai = ai.as_slice().expect("standard layout row");
        for j in i..n {
            let v = spec.eval(ai, a.row(j).as_slice().expect("standard layout row"));
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(GramMatrix {
        values: out,
        symmetric: true,
    })
}

/// Median of the pairwise Euclidean distances (lower median for an even
/// number of pairs).
pub fn median_heuristic(a: ArrayView2<f64>) -> Result<f64> {
    let n = a.nrows();
    if n < 2 {
        return Err(FairError::Degenerate(
            "median heuristic needs at least two points".into(),
        ));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = a
                .row(i)
                .iter()
                .zip(a.row(j).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(|x, y| x.total_cmp(y));
    let med = dists[(dists.len() - 1) / 2];
    if med > 0.0 && med.is_finite() {
        Ok(med)
    } else {
        Err(FairError::Degenerate(
            "median pairwise distance is zero; no positive bandwidth".into(),
        ))
    }
}

/// `H = I - (1/n) 𝟙𝟙ᵀ`.
pub fn centering_matrix(n: usize) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(FairError::InvalidParameter(
            "centering matrix size must be positive".into(),
        ));
    }
    let mut h = Array2::<f64>::from_elem((n, n), -1.0 / n as f64);
    h.diag_mut().mapv_inplace(|v| v + 1.0);
    Ok(h)
}

/// `H L H`, computed by double mean-removal and symmetrized.
pub fn center_gram(l: &Array2<f64>) -> Result<Array2<f64>> {
    let n = l.nrows();
    check_dim("center_gram (square)", n, l.ncols())?;
    if n == 0 {
        return Err(FairError::InvalidParameter("empty Gram matrix".into()));
    }
    let row_means: Array1<f64> = l.mean_axis(Axis(1)).expect("non-empty");
    let col_means: Array1<f64> = l.mean_axis(Axis(0)).expect("non-empty");
    let grand = row_means.mean().expect("non-empty");
    let mut out = l.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = *v - row_means[i] - col_means[j] + grand;
    }
    Ok(crate::linalg::symmetrize(&out))
}
