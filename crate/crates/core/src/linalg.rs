//! Dense linear-algebra helpers shared by the solvers.
//!
//! Thin wrappers over LAPACK (through `ndarray-linalg`) that return crate
//! errors, plus a positive-definite factorization with a diagonal jitter
//! ladder and a couple of spectral utilities.

use ndarray::{Array1, Array2, ArrayBase, ArrayView2, Axis, Data, Ix1, Ix2};
use ndarray_linalg::{
    Cholesky, Diag, Eigh, Factorize, Solve, SolveTriangular, UPLO,
};

use crate::error::{FairError, Result};

/// Relative jitter ladder (multiples of the mean diagonal) tried after a
/// plain factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Cholesky factor `A + jitter·I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct PdFactor {
    lower: Array2<f64>,
    jitter: f64,
}

impl PdFactor {
    /// Factorizes a symmetric positive-definite matrix, escalating a diagonal
    /// jitter along [`JITTER_LADDER`] when the plain factorization fails.
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(FairError::NonFinite("matrix to factorize"));
        }
        if let Ok(lower) = a.cholesky(UPLO::Lower) {
            return Ok(Self { lower, jitter: 0.0 });
        }
        let n = a.nrows();
        let mean_diag = a.diag().sum() / n.max(1) as f64;
        let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut tried = vec![0.0];
        for rel in JITTER_LADDER {
            let jitter = rel * scale;
            tried.push(jitter);
            let mut shifted = a.clone();
            shifted.diag_mut().mapv_inplace(|d| d + jitter);
            if let Ok(lower) = shifted.cholesky(UPLO::Lower) {
                return Ok(Self { lower, jitter });
            }
        }
        Err(FairError::NotPositiveDefinite { ladder: tried })
    }

    /// Diagonal jitter that was needed (0 when none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve_vec<S: Data<Elem = f64>>(&self, b: &ArrayBase<S, Ix1>) -> Result<Array1<f64>> {
        let z = self
            .lower
            .solve_triangular(UPLO::Lower, Diag::NonUnit, &b.to_owned())
            .map_err(lapack_err)?;
        self.lower
            .t()
            .solve_triangular(UPLO::Upper, Diag::NonUnit, &z)
            .map_err(lapack_err)
    }

    /// Solves `L Lᵀ X = B` for a block of right-hand sides.
    pub fn solve_mat<S: Data<Elem = f64>>(&self, b: &ArrayBase<S, Ix2>) -> Result<Array2<f64>> {
        let z = self.solve_lower(b)?;
        self.lower
            .t()
            .solve_triangular(UPLO::Upper, Diag::NonUnit, &z)
            .map_err(lapack_err)
    }

    /// Solves `L Z = B` only (half solve), useful for quadratic forms.
    pub fn solve_lower<S: Data<Elem = f64>>(&self, b: &ArrayBase<S, Ix2>) -> Result<Array2<f64>> {
        self.lower
            .solve_triangular(UPLO::Lower, Diag::NonUnit, &b.to_owned())
            .map_err(lapack_err)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Result<Array2<f64>> {
        let n = self.dim();
        self.solve_mat(&Array2::<f64>::eye(n))
    }
}

pub(crate) fn lapack_err(e: ndarray_linalg::error::LinalgError) -> FairError {
    FairError::Singular(e.to_string())
}

/// Solves a general square system by LU with partial pivoting.
pub fn lu_solve<S: Data<Elem = f64>>(a: &Array2<f64>, b: &ArrayBase<S, Ix1>) -> Result<Array1<f64>> {
    if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(FairError::NonFinite("linear system"));
    }
    let x = a.solve(&b.to_owned()).map_err(lapack_err)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FairError::Singular("LU solution is not finite".into()));
    }
    Ok(x)
}

/// Solves `A X = B` column by column with one LU factorization.
pub fn lu_solve_mat<S: Data<Elem = f64>>(a: &Array2<f64>, b: &ArrayBase<S, Ix2>) -> Result<Array2<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(FairError::NonFinite("linear system"));
    }
    let lu = a.factorize().map_err(lapack_err)?;
    let mut out = Array2::<f64>::zeros(b.raw_dim());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        let x = lu.solve(&col.to_owned()).map_err(lapack_err)?;
        out.column_mut(j).assign(&x);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(FairError::Singular("LU solution is not finite".into()));
    }
    Ok(out)
}

/// General inverse through LU; only used by test-style oracles and small systems.
pub fn lu_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    lu_solve_mat(a, &Array2::<f64>::eye(a.nrows()))
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eig(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(FairError::NonFinite("matrix to diagonalize"));
    }
    a.eigh(UPLO::Lower).map_err(lapack_err)
}

/// Returns `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Array2<f64>) -> Array2<f64> {
    (m + &m.t()) * 0.5
}

/// `B` with `B Bᵀ ≈ M` for a symmetric PSD `M`, keeping eigen-directions whose
/// eigenvalue exceeds `rel_cut` times the largest one. Returns the factor and
/// the retained eigenvalues.
pub fn psd_factor(m: &Array2<f64>, rel_cut: f64) -> Result<(Array2<f64>, Array1<f64>)> {
    let (vals, vecs) = sym_eig(&symmetrize(m))?;
    let top = vals.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = if top > 0.0 {
        (0..vals.len()).filter(|&i| vals[i] > rel_cut * top).collect()
    } else {
        Vec::new()
    };
    let n = m.nrows();
    let mut factor = Array2::<f64>::zeros((n, keep.len()));
    let mut kept = Array1::<f64>::zeros(keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = vals[i].sqrt();
        kept[c] = vals[i];
        factor.column_mut(c).assign(&(&vecs.column(i) * s));
    }
    Ok((factor, kept))
}

/// `(A + floor·I)^{-1/2}` for symmetric PSD `A`, eigenvalues floored at `floor`.
pub fn sym_inv_sqrt(a: &Array2<f64>, floor: f64) -> Result<Array2<f64>> {
    let (vals, vecs) = sym_eig(&symmetrize(a))?;
    let scaled = {
        let w = vals.mapv(|v| 1.0 / (v.max(0.0) + floor).sqrt());
        &vecs * &w.insert_axis(Axis(0))
    };
    Ok(scaled.dot(&vecs.t()))
}

/// Frobenius norm.
pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs(a: ArrayView2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_extremes(a: &Array2<f64>) -> Result<(f64, f64)> {
    let (vals, _) = sym_eig(&symmetrize(a))?;
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}
