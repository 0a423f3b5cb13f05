//! Gaussian-process regression with a fairness-modified prior.
//!
//! The prior covariance on training evaluations is `C* = (K⁻¹ + δ·HLH)⁻¹`.
//! Writing `HLH = B Bᵀ` (a thin eigen-factor) gives the kernel
//!
//! ```text
//! k*(a, b) = k(a, b) - k_aᵀ B (δ⁻¹I + BᵀKB)⁻¹ Bᵀ k_b
//! ```
//!
//! where `k_a` is the column of kernel values between `a` and the training
//! inputs. The posterior mean of this model equals the prediction of
//! [`crate::fair_krr`] with `δ = η/(λn)`.

mod optim;

pub use optim::{
    nlml_gradient, optimize_hyperparams, HyperName, LogBounds, OptimizationReport, OptimizerSettings,
    RestartRecord,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FairError, Result};
use crate::fair_krr::check_rows;
use crate::kernels::{center_gram, gram, gram_self, KernelSpec};
use crate::linalg::{lu_solve_mat, psd_factor, symmetrize, PdFactor};
use crate::metrics::hsic_linear_predictions;

/// Relative eigenvalue cut used when factoring `HLH = B Bᵀ`.
pub(crate) const FACTOR_CUT: f64 = 1e-13;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairGpConfig {
    pub kernel_x: KernelSpec,
    pub kernel_s: KernelSpec,
    /// Gaussian noise variance λ.
    pub noise: f64,
    /// Fairness strength of the prior, δ = η/(λn).
    pub delta: f64,
    /// Subtract the training mean from the targets before fitting.
    #[serde(default = "default_true")]
    pub center_targets: bool,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
}

impl FairGpConfig {
    pub fn new(kernel_x: KernelSpec, kernel_s: KernelSpec, noise: f64, delta: f64) -> Self {
        Self {
            kernel_x,
            kernel_s,
            noise,
            delta,
            center_targets: true,
            optimizer: OptimizerSettings::default(),
        }
    }

    /// The δ matching an ERM fairness weight η for `n` training points.
    pub fn delta_for_eta(eta: f64, noise: f64, n: usize) -> f64 {
        eta / (noise * n as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(FairError::InvalidParameter(format!("noise must be positive, got {}", self.noise)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(FairError::InvalidParameter(format!("delta must be non-negative, got {}", self.delta)));
        }
        self.kernel_x.validate(None)?;
        self.kernel_s.validate(None)
    }
}

/// Fair prior on a training set, kept in factored form.
#[derive(Debug, Clone)]
pub struct FairPrior {
    k: Array2<f64>,
    b: Array2<f64>,
    kb: Array2<f64>,
    /// Cholesky of `δ⁻¹I + BᵀKB`; `None` when δ = 0 or HLH = 0.
    inner: Option<PdFactor>,
    /// `L_S⁻¹ (KB)ᵀ`, so that the correction is `ZᵀZ`.
    z: Array2<f64>,
    gram: Array2<f64>,
}

impl FairPrior {
    /// `k` is the training Gram, `b` a factor with `B Bᵀ = HLH`.
    pub fn new(k: Array2<f64>, b: Array2<f64>, delta: f64) -> Result<Self> {
        check_dim("fair prior: factor rows", k.nrows(), b.nrows())?;
        let n = k.nrows();
        let kb = k.dot(&b);
        if delta == 0.0 || b.ncols() == 0 {
            return Ok(Self { gram: k.clone(), k, b, kb, inner: None, z: Array2::zeros((0, n)) });
        }
        let mut inner = b.t().dot(&kb);
        inner = symmetrize(&inner);
        inner.diag_mut().mapv_inplace(|v| v + 1.0 / delta);
        let factor = PdFactor::new(&inner)?;
        let z = factor.solve_lower(&kb.t())?;
        let gram = symmetrize(&(&k - &z.t().dot(&z)));
        Ok(Self { k, b, kb, inner: Some(factor), z, gram })
    }

    /// Builds the prior from a training Gram and a sensitive Gram `l`.
    pub fn from_grams(k: Array2<f64>, l: &Array2<f64>, delta: f64) -> Result<Self> {
        let m = center_gram(l)?;
        let (b, _) = psd_factor(&m, FACTOR_CUT)?;
        Self::new(k, b, delta)
    }

    /// `C*` on the training inputs.
    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn base_gram(&self) -> &Array2<f64> {
        &self.k
    }

    pub fn factor(&self) -> &Array2<f64> {
        &self.b
    }

    pub(crate) fn kb(&self) -> &Array2<f64> {
        &self.kb
    }

    pub(crate) fn inner(&self) -> Option<&PdFactor> {
        self.inner.as_ref()
    }

    /// `L_S⁻¹ Bᵀ k(X, ·)` for a block of cross kernel values `k_cross` (n×m).
    fn half(&self, k_cross: &Array2<f64>) -> Result<Option<Array2<f64>>> {
        match &self.inner {
            None => Ok(None),
            Some(f) => Ok(Some(f.solve_lower(&self.b.t().dot(k_cross))?)),
        }
    }

    /// Fair prior covariance between two point sets given their cross kernel
    /// values with the training set (`k_ta`: n×a, `k_tb`: n×b) and `k(a, b)`.
    pub fn cross(&self, k_ab: &Array2<f64>, k_ta: &Array2<f64>, k_tb: &Array2<f64>) -> Result<Array2<f64>> {
        match (self.half(k_ta)?, self.half(k_tb)?) {
            (Some(za), Some(zb)) => Ok(k_ab - &za.t().dot(&zb)),
            _ => Ok(k_ab.clone()),
        }
    }

    /// Prior covariance between new points (cross values `k_ts`, n×m) and the
    /// training inputs, returned as n×m.
    pub fn train_cross(&self, k_ts: &Array2<f64>) -> Result<Array2<f64>> {
        match self.half(k_ts)? {
            Some(zs) => Ok(k_ts - &self.z.t().dot(&zs)),
            None => Ok(k_ts.clone()),
        }
    }

    /// Diagonal of the prior at new points, given `k(x,x)` and cross values.
    pub fn diag(&self, k_diag: &Array1<f64>, k_ts: &Array2<f64>) -> Result<Array1<f64>> {
        match self.half(k_ts)? {
            Some(zs) => Ok(k_diag - &zs.mapv(|v| v * v).sum_axis(ndarray::Axis(0))),
            None => Ok(k_diag.clone()),
        }
    }
}

/// Evaluates the fair prior kernel between arbitrary point sets using the
/// training correction. `l` is the sensitive Gram on the training rows.
pub fn fair_prior_kernel_cross(
    config: &FairGpConfig,
    x_train: ArrayView2<f64>,
    l: &Array2<f64>,
    x_a: ArrayView2<f64>,
    x_b: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    config.validate()?;
    check_dim("fair prior: sensitive Gram size", x_train.nrows(), l.nrows())?;
    let k_ab = gram(&config.kernel_x, x_a, x_b)?.values;
    if config.delta == 0.0 {
        return Ok(k_ab);
    }
    let k = gram_self(&config.kernel_x, x_train)?.values;
    let prior = FairPrior::from_grams(k, l, config.delta)?;
    let k_ta = gram(&config.kernel_x, x_train, x_a)?.values;
    let k_tb = gram(&config.kernel_x, x_train, x_b)?.values;
    prior.cross(&k_ab, &k_ta, &k_tb)
}

/// Dense routes to the fair prior Gram on the training inputs, used to
/// cross-check the factored form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorForm {
    /// `K - K(MK + δ⁻¹I)⁻¹MK`
    Correction,
    /// `(K⁻¹ + δM)⁻¹`, with K jittered if needed for the inverse
    InversePrecision,
    /// `(I + δKM)⁻¹K`
    Resolvent,
}

pub fn fair_prior_gram_dense(k: &Array2<f64>, m: &Array2<f64>, delta: f64, form: PriorForm) -> Result<Array2<f64>> {
    check_dim("fair prior: Gram sizes", k.nrows(), m.nrows())?;
    let n = k.nrows();
    let out = match form {
        PriorForm::Correction => {
            let mk = m.dot(k);
            let mut a = mk.clone();
            a.diag_mut().mapv_inplace(|v| v + 1.0 / delta);
            k - &k.dot(&lu_solve_mat(&a, &mk)?)
        }
        PriorForm::InversePrecision => {
            let kinv = PdFactor::new(k)?.inverse()?;
            let prec = symmetrize(&(kinv + m * delta));
            PdFactor::new(&prec)?.inverse()?
        }
        PriorForm::Resolvent => {
            let mut a = k.dot(m) * delta;
            a.diag_mut().mapv_inplace(|v| v + 1.0);
            lu_solve_mat(&a, k)?
        }
    };
    debug_assert_eq!(out.nrows(), n);
    Ok(symmetrize(&out))
}

#[derive(Debug, Clone)]
pub struct FairGpModel {
    pub config: FairGpConfig,
    pub x_train: Array2<f64>,
    /// Training targets after optional centering.
    pub y_train: Array1<f64>,
    pub y_mean: f64,
    pub centered_l: Array2<f64>,
    prior: FairPrior,
    factor: PdFactor,
    pub alpha: Array1<f64>,
    pub nlml: f64,
}

impl FairGpModel {
    /// Fair prior Gram `C*` on the training inputs.
    pub fn prior_gram(&self) -> &Array2<f64> {
        self.prior.gram()
    }

    /// Jitter added to `C* + λI` during factorization.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }
}

fn prepare_targets(y: ArrayView1<f64>, center: bool) -> (Array1<f64>, f64) {
    let mean = if center { y.mean().unwrap_or(0.0) } else { 0.0 };
    (y.mapv(|v| v - mean), mean)
}

fn nlml_from(factor: &PdFactor, y: &Array1<f64>, alpha: &Array1<f64>) -> f64 {
    let n = y.len() as f64;
    0.5 * y.dot(alpha) + 0.5 * factor.log_det() + 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

pub fn gp_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, s: ArrayView2<f64>, config: &FairGpConfig) -> Result<FairGpModel> {
    config.validate()?;
    check_rows(&x, &y, &s)?;
    config.kernel_x.validate(Some(x.ncols()))?;
    let k = gram_self(&config.kernel_x, x)?.values;
    let l = gram_self(&config.kernel_s, s)?.values;
    let m = center_gram(&l)?;
    let (b, _) = psd_factor(&m, FACTOR_CUT)?;
    let prior = FairPrior::new(k, b, config.delta)?;
    let mut sigma = prior.gram().clone();
    sigma.diag_mut().mapv_inplace(|v| v + config.noise);
    let factor = PdFactor::new(&sigma)?;
    let (yc, y_mean) = prepare_targets(y, config.center_targets);
    let alpha = factor.solve_vec(&yc)?;
    let nlml = nlml_from(&factor, &yc, &alpha);
    Ok(FairGpModel {
        config: config.clone(),
        x_train: x.to_owned(),
        y_train: yc,
        y_mean,
        centered_l: m,
        prior,
        factor,
        alpha,
        nlml,
    })
}

/// Posterior mean and variance of the latent function at new inputs.
/// Variances are floored at zero.
pub fn posterior_predict(model: &FairGpModel, x_star: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    check_dim("prediction input dimension", model.x_train.ncols(), x_star.ncols())?;
    let k_ts = gram(&model.config.kernel_x, model.x_train.view(), x_star)?.values;
    let c_ts = model.prior.train_cross(&k_ts)?;
    let mean = c_ts.t().dot(&model.alpha) + model.y_mean;
    let k_diag = Array1::from_iter(x_star.rows().into_iter().map(|r| {
        let v = r.to_vec();
        model.config.kernel_x.eval(&v, &v)
    }));
    let prior_var = model.prior.diag(&k_diag, &k_ts)?;
    let v = model.factor.solve_lower(&c_ts)?;
    let explained = v.mapv(|e| e * e).sum_axis(ndarray::Axis(0));
    let var = (prior_var - explained).mapv(|e| e.max(0.0));
    Ok((mean, var))
}

/// Log marginal likelihood `-½yᵀΣ⁻¹y - ½log|Σ| - (n/2)log 2π` with
/// `Σ = C* + λI`.
pub fn log_marginal_likelihood(x: ArrayView2<f64>, y: ArrayView1<f64>, s: ArrayView2<f64>, config: &FairGpConfig) -> Result<f64> {
    Ok(-gp_fit(x, y, s, config)?.nlml)
}

/// HSIC between predictions and the sensitive rows under the model's
/// sensitive kernel (linear kernel on the predictions).
pub fn unfairness(predictions: ArrayView1<f64>, s: ArrayView2<f64>, kernel_s: &KernelSpec) -> Result<f64> {
    let l = gram_self(kernel_s, s)?.values;
    Ok(hsic_linear_predictions(predictions, l.view())?.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relevance {
    pub index: usize,
    pub name: String,
    pub lengthscale: f64,
}

/// Per-feature ARD lengthscales in index order. Larger means the feature
/// contributes less to the kernel.
pub fn ard_relevance_report(model: &FairGpModel, names: Option<&[String]>) -> Result<Vec<Relevance>> {
    let ls = match &model.config.kernel_x {
        KernelSpec::ArdRbf { lengthscales } => lengthscales,
        _ => return Err(FairError::InvalidParameter("relevance report needs an ARD kernel".into())),
    };
    if let Some(n) = names {
        check_dim("feature names", ls.len(), n.len())?;
    }
    Ok(ls
        .iter()
        .enumerate()
        .map(|(i, &l)| Relevance {
            index: i,
            name: names.map(|n| n[i].clone()).unwrap_or_else(|| format!("x{}", i + 1)),
            lengthscale: l,
        })
        .collect())
}
