//! HSIC-regularized kernel ridge regression in closed form.
//!
//! With squared loss and a linear kernel on the predictions the objective
//!
//! ```text
//! (1/n) Σ (f(x_i) - y_i)² + (λ/n) ‖f‖² + (η/n²) fᵀ H L H f
//! ```
//!
//! has the dual solution `α = (K + λI + (η/n)·HLH·K)⁻¹ y`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FairError, Result};
use crate::kernels::{center_gram, gram, gram_self, KernelSpec};
use crate::linalg::lu_solve;
use crate::metrics::{hsic_linear_centered, rmse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairKrrConfig {
    pub lambda: f64,
    pub eta: f64,
    pub kernel_x: KernelSpec,
    pub kernel_s: KernelSpec,
}

impl FairKrrConfig {
    pub fn new(lambda: f64, eta: f64, kernel_x: KernelSpec, kernel_s: KernelSpec) -> Self {
        Self { lambda, eta, kernel_x, kernel_s }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda_eta(self.lambda, self.eta)?;
        self.kernel_x.validate(None)?;
        self.kernel_s.validate(None)
    }
}

pub(crate) fn check_lambda_eta(lambda: f64, eta: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FairError::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(FairError::InvalidParameter(format!("eta must be non-negative, got {eta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub objective_value: f64,
    pub in_sample_rmse: f64,
    pub in_sample_hsic: f64,
    /// Diagonal jitter added to K (0 unless the plain system failed).
    pub jitter: f64,
}

#[derive(Debug, Clone)]
pub struct FairKrrModel {
    pub alpha: Array1<f64>,
    pub x_train: Array2<f64>,
    pub config: FairKrrConfig,
    pub centered_l: Array2<f64>,
    /// Training target mean, added back at prediction time.
    pub y_mean: f64,
    pub diagnostics: FitDiagnostics,
}

pub(crate) fn check_rows(x: &ArrayView2<f64>, y: &ArrayView1<f64>, s: &ArrayView2<f64>) -> Result<usize> {
    let n = x.nrows();
    check_dim("target length", n, y.len())?;
    check_dim("sensitive rows", n, s.nrows())?;
    if n == 0 {
        return Err(FairError::Degenerate("empty training set".into()));
    }
    if x.iter().chain(y.iter()).chain(s.iter()).any(|v| !v.is_finite()) {
        return Err(FairError::NonFinite("training data"));
    }
    Ok(n)
}

/// Value of the regularized objective at dual coefficients `alpha`, with
/// `m = HLH` and `y` already centered.
pub fn fkl_objective(
    k: &Array2<f64>,
    m: &Array2<f64>,
    y: ArrayView1<f64>,
    alpha: ArrayView1<f64>,
    lambda: f64,
    eta: f64,
) -> f64 {
    let n = y.len() as f64;
    let f = k.dot(&alpha);
    let resid = &f - &y;
    resid.dot(&resid) / n + lambda / n * alpha.dot(&f) + eta / (n * n) * f.dot(&m.dot(&f))
}

/// Solves `(K + λI + (η/n)·M·K) α = y`.
pub fn fkl_dual(k: &Array2<f64>, m: &Array2<f64>, y: ArrayView1<f64>, lambda: f64, eta: f64) -> Result<Array1<f64>> {
    let n = k.nrows();
    let mut a = if eta > 0.0 { m.dot(k) * (eta / n as f64) } else { Array2::zeros((n, n)) };
    a += k;
    a.diag_mut().mapv_inplace(|v| v + lambda);
    lu_solve(&a, &y)
}

pub fn fit_fkl(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    s: ArrayView2<f64>,
    config: &FairKrrConfig,
) -> Result<FairKrrModel> {
    config.validate()?;
    let n = check_rows(&x, &y, &s)?;
    let k = gram_self(&config.kernel_x, x)?.values;
    let l = gram_self(&config.kernel_s, s)?.values;
    let m = center_gram(&l)?;
    let y_mean = y.mean().unwrap_or(0.0);
    let yc = y.mapv(|v| v - y_mean);

    let (alpha, jitter) = match fkl_dual(&k, &m, yc.view(), config.lambda, config.eta) {
        Ok(a) => (a, 0.0),
        Err(_) => {
            let jitter = 1e-10 * k.diag().sum() / n as f64;
            let mut kj = k.clone();
            kj.diag_mut().mapv_inplace(|v| v + jitter);
            (fkl_dual(&kj, &m, yc.view(), config.lambda, config.eta)?, jitter)
        }
    };

    let f = k.dot(&alpha);
    let diagnostics = FitDiagnostics {
        objective_value: fkl_objective(&k, &m, yc.view(), alpha.view(), config.lambda, config.eta),
        in_sample_rmse: rmse(f.view(), yc.view())?,
        in_sample_hsic: hsic_linear_centered(f.view(), &m)?.max(0.0),
        jitter,
    };
    Ok(FairKrrModel {
        alpha,
        x_train: x.to_owned(),
        config: config.clone(),
        centered_l: m,
        y_mean,
        diagnostics,
    })
}

/// `K(X_star, X_train)·α + offset`.
pub(crate) fn dual_predict(
    kernel: &KernelSpec,
    x_train: &Array2<f64>,
    alpha: &Array1<f64>,
    offset: f64,
    x_star: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    check_dim("prediction input dimension", x_train.ncols(), x_star.ncols())?;
    let cross = gram(kernel, x_star, x_train.view())?.values;
    Ok(cross.dot(alpha) + offset)
}

pub fn predict_fkl(model: &FairKrrModel, x_star: ArrayView2<f64>) -> Result<Array1<f64>> {
    dual_predict(&model.config.kernel_x, &model.x_train, &model.alpha, model.y_mean, x_star)
}

/// Primal fair linear regression.
#[derive(Debug, Clone, PartialEq)]
pub struct FairLinearModel {
    pub beta: Array1<f64>,
    pub lambda: f64,
    pub eta: f64,
    /// Number of explicit sensitive features the penalty was built from.
    pub sensitive_features: usize,
}

impl FairLinearModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_dim("linear model input dimension", self.beta.len(), x.ncols())?;
        Ok(x.dot(&self.beta))
    }
}

/// `(1/n) Gᵀ H F`, the empirical cross-covariance between two feature maps.
pub fn empirical_cross_covariance(f: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_dim("cross-covariance rows", f.nrows(), g.nrows())?;
    let n = f.nrows();
    if n == 0 {
        return Err(FairError::Degenerate("cross-covariance of an empty sample".into()));
    }
    // HF without forming the n×n centering matrix
    let fc = &f - &f.mean_axis(Axis(0)).expect("non-empty");
    Ok(g.t().dot(&fc) / n as f64)
}

/// `β = (XᵀX + λI + nη Σ̂_xs Σ̂_sx)⁻¹ Xᵀy`. No intercept is fitted.
pub fn fit_fair_linear(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    s_features: ArrayView2<f64>,
    lambda: f64,
    eta: f64,
) -> Result<FairLinearModel> {
    check_lambda_eta(lambda, eta)?;
    let n = check_rows(&x, &y, &s_features)?;
    let sigma_sx = empirical_cross_covariance(x, s_features)?;
    let mut a = x.t().dot(&x) + sigma_sx.t().dot(&sigma_sx) * (n as f64 * eta);
    a.diag_mut().mapv_inplace(|v| v + lambda);
    let beta = lu_solve(&a, &x.t().dot(&y))?;
    Ok(FairLinearModel { beta, lambda, eta, sensitive_features: s_features.ncols() })
}

/// Objective of the primal fair linear problem; its minimizer is
/// [`fit_fair_linear`].
pub fn fair_linear_objective(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    s_features: ArrayView2<f64>,
    beta: ArrayView1<f64>,
    lambda: f64,
    eta: f64,
) -> Result<f64> {
    let n = x.nrows() as f64;
    let sigma_sx = empirical_cross_covariance(x, s_features)?;
    let r = x.dot(&beta) - y;
    let c = sigma_sx.dot(&beta);
    Ok(r.dot(&r) / n + lambda / n * beta.dot(&beta) + eta * c.dot(&c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, sym_eig};
    use crate::metrics::hsic_linear_predictions;
    use ndarray::{array, s};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    fn problem(n: usize, seed: u64) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        let x = normals(n, 3, seed);
        let s = normals(n, 1, seed + 1) + &x.slice(s![.., 0..1]);
        let noise = normals(n, 1, seed + 2);
        let y = Array1::from_shape_fn(n, |i| x[[i, 0]].sin() + 0.5 * x[[i, 1]] + 0.1 * noise[[i, 0]]);
        (x, y, s)
    }

    fn config(lambda: f64, eta: f64) -> FairKrrConfig {
        FairKrrConfig::new(lambda, eta, KernelSpec::rbf(1.5), KernelSpec::rbf(1.0))
    }

    #[test]
    fn eta_zero_is_kernel_ridge() {
        let (x, y, s) = problem(15, 3);
        let model = fit_fkl(x.view(), y.view(), s.view(), &config(0.3, 0.0)).unwrap();
        let mut a = gram_self(&KernelSpec::rbf(1.5), x.view()).unwrap().values;
        a.diag_mut().mapv_inplace(|v| v + 0.3);
        let yc = &y - y.mean().unwrap();
        let ridge = lu_solve(&a, &yc).unwrap();
        assert!(max_abs((&model.alpha - &ridge).insert_axis(Axis(0)).view()) < 1e-12);
    }

    #[test]
    fn closed_form_beats_gradient_descent() {
        let (x, y, s) = problem(20, 11);
        // moderate lengthscale keeps K well conditioned enough for the iterate check
        let cfg = FairKrrConfig::new(0.5, 2.0, KernelSpec::rbf(1.0), KernelSpec::rbf(1.0));
        let model = fit_fkl(x.view(), y.view(), s.view(), &cfg).unwrap();
        let k = gram_self(&cfg.kernel_x, x.view()).unwrap().values;
        let m = model.centered_l.clone();
        let yc = &y - model.y_mean;
        let n = 20.0;
        let hess = (k.dot(&k) + &k * 0.5 + k.dot(&m).dot(&k) * (2.0 / n)) * (2.0 / n);
        let (vals, _) = sym_eig(&crate::linalg::symmetrize(&hess)).unwrap();
        let step = 1.0 / vals[vals.len() - 1];
        let mut a = Array1::<f64>::zeros(20);
        let mut prev = a.clone();
        for t in 0..10_000 {
            // Nesterov momentum on the quadratic dual objective
            let v = &a + &((&a - &prev) * (t as f64 / (t as f64 + 3.0)));
            let f = k.dot(&v);
            let grad = k.dot(&(&f - &yc + &(&v * 0.5) + &(m.dot(&f) * (2.0 / n)))) * (2.0 / n);
            prev = a;
            a = &v - &(grad * step);
        }
        let j_gd = fkl_objective(&k, &m, yc.view(), a.view(), 0.5, 2.0);
        let j_cf = model.diagnostics.objective_value;
        assert!(j_cf <= j_gd + 1e-14 && j_gd - j_cf < 1e-8, "{j_cf} {j_gd}");
        assert!(max_abs((&a - &model.alpha).insert_axis(Axis(0)).view()) < 1e-5);
    }

    #[test]
    fn first_order_optimality() {
        let (x, y, s) = problem(25, 21);
        let cfg = config(0.2, 5.0);
        let model = fit_fkl(x.view(), y.view(), s.view(), &cfg).unwrap();
        let k = gram_self(&cfg.kernel_x, x.view()).unwrap().values;
        let yc = &y - model.y_mean;
        let base = model.diagnostics.objective_value;
        for seed in 0..10 {
            let v = normals(25, 1, 100 + seed).column(0).to_owned();
            let moved = &model.alpha + &(v * 1e-4);
            let j = fkl_objective(&k, &model.centered_l, yc.view(), moved.view(), 0.2, 5.0);
            assert!(j >= base - 1e-8);
        }
    }

    #[test]
    fn prediction_cases() {
        let (x, y, s) = problem(12, 31);
        let cfg = config(0.1, 1.0);
        let model = fit_fkl(x.view(), y.view(), s.view(), &cfg).unwrap();
        let k = gram_self(&cfg.kernel_x, x.view()).unwrap().values;
        let in_sample = predict_fkl(&model, x.view()).unwrap();
        let direct = k.dot(&model.alpha) + model.y_mean;
        assert!(max_abs((&in_sample - &direct).insert_axis(Axis(0)).view()) < 1e-12);

        let xs = normals(5, 3, 32);
        let p = predict_fkl(&model, xs.view()).unwrap();
        for i in 0..5 {
            let mut acc = model.y_mean;
            for j in 0..12 {
                acc += model.alpha[j] * cfg.kernel_x.eval(&xs.row(i).to_vec(), &x.row(j).to_vec());
            }
            assert!((acc - p[i]).abs() < 1e-12);
        }
        assert!(predict_fkl(&model, normals(2, 2, 1).view()).is_err());
    }

    #[test]
    fn single_point_linear_prediction_scales_with_inner_product() {
        let x = array![[1.0, 2.0]];
        let cfg = FairKrrConfig::new(1.0, 0.0, KernelSpec::Linear, KernelSpec::Linear);
        let mut model = fit_fkl(x.view(), array![3.0].view(), array![[0.0]].view(), &cfg).unwrap();
        // the centered target of a single point is 0; use a raw alpha to check the expansion
        model.alpha = array![0.7];
        model.y_mean = 0.0;
        let p = predict_fkl(&model, array![[2.0, -1.0], [1.0, 1.0]].view()).unwrap();
        assert!((p[0] - 0.7 * 0.0).abs() < 1e-15);
        assert!((p[1] - 0.7 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn cross_covariance_cases() {
        let f = normals(10, 3, 41);
        let g = Array2::from_elem((10, 2), 3.0);
        assert!(max_abs(empirical_cross_covariance(f.view(), g.view()).unwrap().view()) < 1e-14);
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let c = empirical_cross_covariance(e.view(), e.view()).unwrap();
        assert!(max_abs((c - array![[0.25, -0.25], [-0.25, 0.25]]).view()) < 1e-15);
        let g = normals(10, 2, 42);
        let c = empirical_cross_covariance(f.view(), g.view()).unwrap();
        for r in 0..2 {
            for p in 0..3 {
                let mf: f64 = (0..10).map(|i| f[[i, p]]).sum::<f64>() / 10.0;
                let mg: f64 = (0..10).map(|i| g[[i, r]]).sum::<f64>() / 10.0;
                let v: f64 = (0..10).map(|i| (f[[i, p]] - mf) * (g[[i, r]] - mg)).sum::<f64>() / 10.0;
                assert!((c[[r, p]] - v).abs() < 1e-14);
            }
        }
        assert!(empirical_cross_covariance(f.view(), normals(9, 2, 1).view()).is_err());
    }

    #[test]
    fn fair_linear_eta_zero_is_ridge() {
        let (x, y, s) = problem(30, 51);
        let m = fit_fair_linear(x.view(), y.view(), s.view(), 0.4, 0.0).unwrap();
        let mut a = x.t().dot(&x);
        a.diag_mut().mapv_inplace(|v| v + 0.4);
        let ridge = lu_solve(&a, &x.t().dot(&y)).unwrap();
        assert!(max_abs((&m.beta - &ridge).insert_axis(Axis(0)).view()) < 1e-12);
    }

    #[test]
    fn fair_linear_diagonal_shrinkage() {
        // X with orthonormal centered columns, Ψ aligned so Σ̂_sx is diagonal
        let n = 8usize;
        let mut x = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            x[[i, 0]] = if i % 2 == 0 { 1.0 } else { -1.0 };
            x[[i, 1]] = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
        }
        x /= (n as f64).sqrt();
        let sig = [0.3, 1.2];
        let mut psi = x.clone();
        for c in 0..2 {
            psi.column_mut(c).mapv_inplace(|v| v * sig[c] * n as f64);
        }
        let sigma = empirical_cross_covariance(x.view(), psi.view()).unwrap();
        assert!((sigma[[0, 1]]).abs() < 1e-14 && (sigma[[0, 0]] - sig[0]).abs() < 1e-14);
        let y = array![1.0, -0.5, 0.3, 2.0, -1.0, 0.7, 0.1, -0.4];
        let (lambda, eta) = (0.0 + 1e-9, 0.05);
        let fair = fit_fair_linear(x.view(), y.view(), psi.view(), lambda, eta).unwrap();
        let plain = fit_fair_linear(x.view(), y.view(), psi.view(), lambda, 0.0).unwrap();
        for i in 0..2 {
            let expected = (1.0 + lambda) / (1.0 + lambda + n as f64 * eta * sig[i] * sig[i]);
            assert!((fair.beta[i] / plain.beta[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fair_linear_matches_gradient_descent() {
        let (x, y, s) = problem(30, 61);
        let (lambda, eta) = (0.5, 3.0);
        let model = fit_fair_linear(x.view(), y.view(), s.view(), lambda, eta).unwrap();
        let n = 30.0;
        let sig = empirical_cross_covariance(x.view(), s.view()).unwrap();
        let mut hess = (x.t().dot(&x) / n + sig.t().dot(&sig) * eta) * 2.0;
        hess.diag_mut().mapv_inplace(|v| v + 2.0 * lambda / n);
        let (vals, _) = sym_eig(&hess).unwrap();
        let step = 1.0 / vals[vals.len() - 1];
        let mut b = Array1::<f64>::zeros(3);
        for _ in 0..20_000 {
            let r = x.dot(&b) - &y;
            let grad = x.t().dot(&r) * (2.0 / n) + &b * (2.0 * lambda / n) + sig.t().dot(&sig.dot(&b)) * (2.0 * eta);
            b = &b - &(grad * step);
        }
        assert!(max_abs((&b - &model.beta).insert_axis(Axis(0)).view()) < 1e-6);
        let j_cf = fair_linear_objective(x.view(), y.view(), s.view(), model.beta.view(), lambda, eta).unwrap();
        let j_gd = fair_linear_objective(x.view(), y.view(), s.view(), b.view(), lambda, eta).unwrap();
        assert!(j_cf <= j_gd + 1e-14);
    }

    #[test]
    fn monotone_tradeoff_along_eta() {
        let (x, y, s) = problem(40, 71);
        let mut prev: Option<(f64, f64)> = None;
        for eta in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0] {
            let m = fit_fkl(x.view(), y.view(), s.view(), &config(0.3, eta)).unwrap();
            let h = m.diagnostics.in_sample_hsic;
            let e = m.diagnostics.in_sample_rmse;
            if let Some((ph, pe)) = prev {
                assert!(h <= ph * 1.01 + 1e-15, "hsic {h} > {ph} at eta {eta}");
                assert!(e >= pe * 0.99, "error {e} < {pe} at eta {eta}");
            }
            prev = Some((h, e));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let (x, y, s) = problem(5, 1);
        assert!(fit_fkl(x.view(), y.view(), s.view(), &config(0.0, 1.0)).is_err());
        assert!(fit_fkl(x.view(), y.view(), s.view(), &config(1.0, -1.0)).is_err());
        assert!(fit_fkl(x.view(), y.slice(s![..4]), s.view(), &config(1.0, 1.0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn cross_covariance_identity(seed in 0u64..10_000) {
            let x = normals(15, 3, seed);
            let psi = normals(15, 2, seed + 1);
            let beta = normals(3, 1, seed + 2).column(0).to_owned();
            let f = x.dot(&beta);
            let l = psi.dot(&psi.t());
            let lhs = hsic_linear_predictions(f.view(), l.view()).unwrap() * 225.0;
            let c = empirical_cross_covariance(x.view(), psi.view()).unwrap().dot(&beta);
            let rhs = 225.0 * c.dot(&c);
            prop_assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
        }

        #[test]
        fn target_shift_leaves_hsic(seed in 0u64..10_000, shift in -50.0f64..50.0) {
            let (x, y, s) = problem(12, seed);
            let cfg = config(0.2, 3.0);
            let a = fit_fkl(x.view(), y.view(), s.view(), &cfg).unwrap();
            let shifted = &y + shift;
            let b = fit_fkl(x.view(), shifted.view(), s.view(), &cfg).unwrap();
            let pa = predict_fkl(&a, x.view()).unwrap();
            let pb = predict_fkl(&b, x.view()).unwrap();
            let ha = hsic_linear_centered(pa.view(), &a.centered_l).unwrap();
            let hb = hsic_linear_centered(pb.view(), &b.centered_l).unwrap();
            prop_assert!((ha - hb).abs() < 1e-10);
        }
    }
}
