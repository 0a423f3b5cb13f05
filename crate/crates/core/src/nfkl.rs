//! Normalized fair kernel learning.
//!
//! The dependence penalty uses the normalized cross-covariance operator, so
//! it is much less sensitive to the scale of the sensitive kernel than HSIC.
//! Inside this module `lambda` multiplies the unscaled norm `λ‖f‖²`; the
//! kernel system therefore contains `nλI`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FairError, Result};
use crate::fair_krr::{check_lambda_eta, check_rows, dual_predict, empirical_cross_covariance};
use crate::kernels::{center_gram, gram_self, KernelSpec};
use crate::linalg::{lu_solve, sym_inv_sqrt, PdFactor};
use crate::metrics::{normalized_operator, nocco_predictions};

/// Default cross-covariance regularizer.
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NfklConfig {
    pub lambda: f64,
    pub eta: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub kernel_x: KernelSpec,
    pub kernel_s: KernelSpec,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

impl NfklConfig {
    pub fn new(lambda: f64, eta: f64, kernel_x: KernelSpec, kernel_s: KernelSpec) -> Self {
        Self { lambda, eta, eps: DEFAULT_EPS, kernel_x, kernel_s }
    }

    /// Builds a config from a regularizer given in the `(λ/n)‖f‖²` convention
    /// used by [`crate::fair_krr`].
    pub fn from_scaled_lambda(lambda_scaled: f64, n: usize, eta: f64, kernel_x: KernelSpec, kernel_s: KernelSpec) -> Self {
        Self::new(lambda_scaled / n as f64, eta, kernel_x, kernel_s)
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda_eta(self.lambda, self.eta)?;
        check_eps(self.eps)?;
        self.kernel_x.validate(None)?;
        self.kernel_s.validate(None)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(FairError::InvalidParameter(format!("eps must be positive, got {eps}")))
    }
}

#[derive(Debug, Clone)]
pub struct NfklModel {
    pub alpha: Array1<f64>,
    pub x_train: Array2<f64>,
    pub config: NfklConfig,
    pub centered_l: Array2<f64>,
    pub y_mean: f64,
}

/// Solves `(K + nλI + η·R·K) α = y` with `R = L̃(L̃ + nεI)⁻¹`.
pub fn nfkl_dual(k: &Array2<f64>, r: &Array2<f64>, y: ArrayView1<f64>, lambda: f64, eta: f64) -> Result<Array1<f64>> {
    let n = k.nrows();
    let mut a = if eta > 0.0 { r.dot(k) * eta } else { Array2::zeros((n, n)) };
    a += k;
    a.diag_mut().mapv_inplace(|v| v + n as f64 * lambda);
    lu_solve(&a, &y)
}

pub fn fit_nfkl(x: ArrayView2<f64>, y: ArrayView1<f64>, s: ArrayView2<f64>, config: &NfklConfig) -> Result<NfklModel> {
    config.validate()?;
    check_rows(&x, &y, &s)?;
    let k = gram_self(&config.kernel_x, x)?.values;
    let l = gram_self(&config.kernel_s, s)?.values;
    let r = normalized_operator(l.view(), config.eps)?;
    let y_mean = y.mean().unwrap_or(0.0);
    let yc = y.mapv(|v| v - y_mean);
    let alpha = nfkl_dual(&k, &r, yc.view(), config.lambda, config.eta)?;
    Ok(NfklModel {
        alpha,
        x_train: x.to_owned(),
        config: config.clone(),
        centered_l: center_gram(&l)?,
        y_mean,
    })
}

pub fn predict_nfkl(model: &NfklModel, x_star: ArrayView2<f64>) -> Result<Array1<f64>> {
    dual_predict(&model.config.kernel_x, &model.x_train, &model.alpha, model.y_mean, x_star)
}

fn covariances(x: ArrayView2<f64>, s: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let sxx = empirical_cross_covariance(x, x)?;
    let sss = empirical_cross_covariance(s, s)?;
    let ssx = empirical_cross_covariance(x, s)?;
    Ok((sxx, sss, ssx))
}

/// `Σ̂_xs (Σ̂_ss + εI)⁻¹ Σ̂_sx`, the part of the input covariance explained by
/// the sensitive features.
pub fn explained_covariance(x: ArrayView2<f64>, s_features: ArrayView2<f64>, eps: f64) -> Result<Array2<f64>> {
    check_eps(eps)?;
    let (_, mut sss, ssx) = covariances(x, s_features)?;
    sss.diag_mut().mapv_inplace(|v| v + eps);
    let factor = PdFactor::new(&sss)?;
    Ok(ssx.t().dot(&factor.solve_mat(&ssx)?))
}

fn primal_solve(x: ArrayView2<f64>, y: ArrayView1<f64>, penalty: &Array2<f64>, lambda: f64, eta: f64) -> Result<Array1<f64>> {
    let n = x.nrows() as f64;
    let mut a = x.t().dot(&x) + penalty * (n * eta);
    a.diag_mut().mapv_inplace(|v| v + n * lambda);
    lu_solve(&a, &x.t().dot(&y))
}

/// Explicit-feature solution with the partially normalized penalty,
/// `β = (ΦᵀΦ + nλI + nη Σ̂_xs(Σ̂_ss+εI)⁻¹Σ̂_sx)⁻¹ Φᵀy`.
pub fn fit_partial_nocco_primal(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    s_features: ArrayView2<f64>,
    lambda: f64,
    eta: f64,
    eps: f64,
) -> Result<Array1<f64>> {
    check_lambda_eta(lambda, eta)?;
    check_rows(&x, &y, &s_features)?;
    let p = explained_covariance(x, s_features, eps)?;
    primal_solve(x, y, &p, lambda, eta)
}

/// The fully normalized penalty matrix
/// `Σ̂_xx^{-1/2} Σ̂_xs (Σ̂_ss+εI)⁻¹ Σ̂_sx Σ̂_xx^{-1/2}` (ε-floored inverse roots).
pub fn normalized_penalty(x: ArrayView2<f64>, s_features: ArrayView2<f64>, eps: f64) -> Result<Array2<f64>> {
    check_eps(eps)?;
    let (sxx, mut sss, ssx) = covariances(x, s_features)?;
    let wx = sym_inv_sqrt(&sxx, eps)?;
    sss.diag_mut().mapv_inplace(|v| v + eps);
    let factor = PdFactor::new(&sss)?;
    let middle = ssx.t().dot(&factor.solve_mat(&ssx)?);
    Ok(wx.dot(&middle).dot(&wx))
}

/// Fully normalized fair linear regression with explicit finite features.
pub fn fit_fair_linear_nocco(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    s_features: ArrayView2<f64>,
    lambda: f64,
    eta: f64,
    eps: f64,
) -> Result<Array1<f64>> {
    check_lambda_eta(lambda, eta)?;
    check_rows(&x, &y, &s_features)?;
    let p = normalized_penalty(x, s_features, eps)?;
    primal_solve(x, y, &p, lambda, eta)
}

/// `(1/n)‖Xβ - y‖² + λ‖β‖² + η βᵀ P β` for a penalty matrix `P`.
pub fn primal_objective(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    penalty: &Array2<f64>,
    beta: ArrayView1<f64>,
    lambda: f64,
    eta: f64,
) -> f64 {
    let n = x.nrows() as f64;
    let r = x.dot(&beta) - y;
    r.dot(&r) / n + lambda * beta.dot(&beta) + eta * beta.dot(&penalty.dot(&beta))
}

/// Value of the NOCCO-penalized objective at in-sample predictions `f`:
/// `(1/n)Σ(f_i - y_i)² + λ αᵀKα + η Tr[R_f R_L]`, where `R_f` comes from
/// the linear kernel on `f`. The norm term is only included when `alpha`
/// is supplied.
pub fn nocco_objective_value(
    f: ArrayView1<f64>,
    y: ArrayView1<f64>,
    k: &Array2<f64>,
    l: &Array2<f64>,
    alpha: Option<ArrayView1<f64>>,
    lambda: f64,
    eta: f64,
    eps: f64,
) -> Result<f64> {
    let n = f.len();
    check_dim("nocco objective: target length", n, y.len())?;
    check_dim("nocco objective: K size", n, k.nrows())?;
    check_dim("nocco objective: L size", n, l.nrows())?;
    if n == 0 {
        return Err(FairError::Degenerate("empty sample".into()));
    }
    let r = &f - &y;
    let mut value = r.dot(&r) / n as f64;
    if let Some(a) = alpha {
        check_dim("nocco objective: alpha length", n, a.len())?;
        value += lambda * a.dot(&k.dot(&a));
    }
    if eta > 0.0 {
        let r_l = normalized_operator(l.view(), eps)?;
        value += eta * nocco_predictions(f, &r_l, eps)?;
    }
    Ok(value)
}
