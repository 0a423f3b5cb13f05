//! η sweeps, cross-validated model selection and method comparison.
//!
//! Per-trial randomness comes from `rng_for(master_seed, trial + 1)`, whose
//! first four draws seed the data, the CV folds, the θ candidates and the GP
//! restarts, in that order.

use std::path::PathBuf;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::{
    baseline_frl, baseline_osv, gen_toy1, gen_toy2, load_csv, rng_for, standardize, train_test_split, CsvSpec,
    Dataset, Toy1Config, Toy2Config,
};
use crate::error::{FairError, Result};
use crate::fair_gp::{
    gp_fit, optimize_hyperparams, posterior_predict, FairGpConfig, HyperName, OptimizerSettings, FACTOR_CUT,
};
use crate::fair_krr::{fit_fkl, predict_fkl, FairKrrConfig};
use crate::kernels::{center_gram, gram, gram_self, median_heuristic, KernelSpec};
use crate::linalg::sym_eig;
use crate::metrics::{r_squared, rmse, DependenceAuditor, DEFAULT_MI_BINS};
use crate::nfkl::{fit_nfkl, predict_nfkl, NfklConfig, DEFAULT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Krr,
    Fkl,
    Nfkl,
    Gp,
    FairGp,
}

impl Method {
    pub fn is_gp(self) -> bool {
        matches!(self, Method::Gp | Method::FairGp)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Krr => "krr",
            Method::Fkl => "fkl",
            Method::Nfkl => "nfkl",
            Method::Gp => "gp",
            Method::FairGp => "fair_gp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    #[default]
    None,
    Osv,
    Frl,
}

/// RBF lengthscale candidates for the ERM methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaGrid {
    Values(Vec<f64>),
    /// The median heuristic on the training inputs plus `draws` log-normal
    /// perturbations of it with log-scale `sigma_log`.
    Heuristic { draws: usize, sigma_log: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// `n` and `seed` of the generator are replaced per trial.
    Toy1(Toy1Config),
    Toy2(Toy2Config),
    Csv {
        path: PathBuf,
        #[serde(flatten)]
        columns: CsvSpec,
        #[serde(default)]
        standardize: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: usize,
    pub test: usize,
}

/// Settings used by the GP methods only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSweepSettings {
    pub ard: bool,
    pub restarts: usize,
    pub max_iters: usize,
    pub initial_noise: f64,
}

impl Default for GpSweepSettings {
    fn default() -> Self {
        Self { ard: false, restarts: 10, max_iters: 100, initial_noise: 0.1 }
    }
}

fn default_trials() -> usize {
    5
}

fn default_folds() -> usize {
    5
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub method: Method,
    pub eta_grid: Vec<f64>,
    pub theta_grid: ThetaGrid,
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub split: Split,
    /// Sensitive RBF lengthscale; the median heuristic on the training
    /// sensitive columns when absent.
    #[serde(default)]
    pub theta_l: Option<f64>,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// NOCCO regularizer, used by NFKL fits and the NOCCO metric.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub gp: GpSweepSettings,
}

fn check_grid(name: &str, grid: &[f64], allow_zero: bool) -> Result<()> {
    if grid.is_empty() {
        return Err(FairError::Config(format!("{name} is empty")));
    }
    for &v in grid {
        let ok = v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0));
        if !ok {
            return Err(FairError::Config(format!("{name} contains invalid value {v}")));
        }
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FairError::Config(format!("{name} must be strictly ascending")));
    }
    Ok(())
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        check_grid("eta_grid", &self.eta_grid, true)?;
        if !self.method.is_gp() {
            check_grid("lambda_grid", &self.lambda_grid, false)?;
            match &self.theta_grid {
                ThetaGrid::Values(v) => check_grid("theta_grid", v, false)?,
                ThetaGrid::Heuristic { sigma_log, .. } => {
                    if !(sigma_log.is_finite() && *sigma_log >= 0.0) {
                        return Err(FairError::Config("sigma_log must be non-negative".into()));
                    }
                }
            }
            if self.folds < 2 || self.folds > self.split.train {
                return Err(FairError::Config(format!("folds must lie in [2, train size], got {}", self.folds)));
            }
        }
        if self.trials == 0 {
            return Err(FairError::Config("trials must be at least 1".into()));
        }
        if self.split.train < 2 || self.split.test < 2 {
            return Err(FairError::Config("train and test sizes must be at least 2".into()));
        }
        if let Some(t) = self.theta_l {
            if !(t > 0.0 && t.is_finite()) {
                return Err(FairError::Config(format!("theta_l must be positive, got {t}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(FairError::Config("eps must be positive".into()));
        }
        if self.method.is_gp() && (self.gp.max_iters == 0 || !(self.gp.initial_noise > 0.0)) {
            return Err(FairError::Config("gp settings need max_iters >= 1 and positive initial_noise".into()));
        }
        Ok(())
    }

    /// Row label used in comparison tables.
    pub fn label(&self) -> String {
        match self.preprocess {
            Preprocess::None => self.method.name().to_string(),
            Preprocess::Osv => format!("{}+osv", self.method.name()),
            Preprocess::Frl => format!("{}+frl", self.method.name()),
        }
    }
}

/// `n` values log-spaced over `[lo, hi]`, both ends included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// One (trial, η) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub trial: usize,
    pub eta: f64,
    pub rmse: f64,
    pub r2_obs: f64,
    pub r2_true: Option<f64>,
    pub hsic: f64,
    pub nocco: f64,
    pub mi: f64,
    pub corr_sensitive: f64,
    pub theta: f64,
    pub lambda: f64,
    pub nlml: Option<f64>,
    /// Prior fairness strength of the GP methods, `η/(λn)`.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub trial: usize,
    pub eta: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        Summary { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub eta: f64,
    pub trials: usize,
    pub rmse: Summary,
    pub r2_obs: Summary,
    pub r2_true: Option<Summary>,
    pub hsic: Summary,
    pub nocco: Summary,
    pub mi: Summary,
    pub corr_sensitive: Summary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub records: Vec<SweepRecord>,
    pub errors: Vec<CellError>,
}

impl TradeoffCurve {
    /// Records of one trial in η order.
    pub fn trial(&self, t: usize) -> Vec<&SweepRecord> {
        self.records.iter().filter(|r| r.trial == t).collect()
    }

    /// Mean and standard error over trials for every η.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut etas: Vec<f64> = self.records.iter().map(|r| r.eta).collect();
        etas.sort_by(f64::total_cmp);
        etas.dedup();
        etas.into_iter()
            .map(|eta| {
                let mut rows: Vec<&SweepRecord> = self.records.iter().filter(|r| r.eta == eta).collect();
                rows.sort_by_key(|r| r.trial);
                let col = |f: &dyn Fn(&SweepRecord) -> f64| Summary::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                let r2_true: Option<Vec<f64>> = rows.iter().map(|r| r.r2_true).collect();
                AggregateRow {
                    eta,
                    trials: rows.len(),
                    rmse: col(&|r| r.rmse),
                    r2_obs: col(&|r| r.r2_obs),
                    r2_true: r2_true.map(|v| Summary::of(&v)),
                    hsic: col(&|r| r.hsic),
                    nocco: col(&|r| r.nocco),
                    mi: col(&|r| r.mi),
                    corr_sensitive: col(&|r| r.corr_sensitive),
                }
            })
            .collect()
    }
}

/// Fold layout and sensitive kernel shared by all CV fits.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSettings {
    pub folds: usize,
    pub seed: u64,
    pub kernel_s: KernelSpec,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvChoice {
    pub theta: f64,
    pub lambda: f64,
    pub cv_rmse: f64,
}

/// Low-rank form `c · V diag(w) Vᵀ` of the fairness operator on one fold.
fn penalty_factor(method: Method, s_train: &Array2<f64>, kernel_s: &KernelSpec, eps: f64) -> Result<(Array2<f64>, f64)> {
    let n = s_train.nrows();
    if method == Method::Krr {
        return Ok((Array2::zeros((n, 0)), 0.0));
    }
    let lc = center_gram(&gram_self(kernel_s, s_train.view())?.values)?;
    let (vals, vecs) = sym_eig(&lc)?;
    let top = vals.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&i| top > 0.0 && vals[i] > FACTOR_CUT * top).collect();
    let mut b = Array2::<f64>::zeros((n, keep.len()));
    for (c, &i) in keep.iter().enumerate() {
        let w = match method {
            Method::Fkl => vals[i],
            _ => vals[i] / (vals[i] + n as f64 * eps),
        };
        b.column_mut(c).assign(&(&vecs.column(i) * w.sqrt()));
    }
    let scale = if method == Method::Fkl { 1.0 / n as f64 } else { 1.0 };
    Ok((b, scale))
}

/// Mean k-fold validation RMSE for every (η, θ, λ), indexed in that order.
///
/// Each fold solves `(K + λI + c B Bᵀ K) α = y` through the eigenbasis of K
/// and a Woodbury correction, so a (λ, η) pair costs O(n p) after one
/// eigendecomposition per (fold, θ). For FKL `B Bᵀ = HLH` and `c = η/n`; for
/// NFKL `B Bᵀ = L̃(L̃ + nεI)⁻¹` and `c = η`, with λ in the `K + λI` scaling.
/// Failed cells hold NaN.
pub fn cv_grid(
    train: &Dataset,
    method: Method,
    etas: &[f64],
    thetas: &[f64],
    lambdas: &[f64],
    settings: &CvSettings,
) -> Result<Array3<f64>> {
    if method.is_gp() {
        return Err(FairError::InvalidParameter("cross-validation applies to the ERM methods".into()));
    }
    if etas.is_empty() || thetas.is_empty() || lambdas.is_empty() {
        return Err(FairError::InvalidParameter("empty CV grid".into()));
    }
    let folds = crate::datasets::kfold_indices(train.n(), settings.folds, settings.seed)?;
    let mut scores = Array3::<f64>::zeros((etas.len(), thetas.len(), lambdas.len()));
    for (f, val) in folds.iter().enumerate() {
        let tr: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect();
        let (dtr, dval) = (train.subset(&tr), train.subset(val));
        let y_mean = dtr.y.mean().unwrap_or(0.0);
        let yc = dtr.y.mapv(|v| v - y_mean);
        let fold_scores = penalty_factor(method, &dtr.s, &settings.kernel_s, settings.eps)
            .and_then(|(b, scale)| fold_grid(&dtr, &dval, &yc, y_mean, &b, scale, etas, thetas, lambdas));
        match fold_scores {
            Ok(s) => scores += &s,
            Err(_) => scores.fill(f64::NAN),
        }
    }
    Ok(scores / folds.len() as f64)
}

#[allow(clippy::too_many_arguments)]
fn fold_grid(
    dtr: &Dataset,
    dval: &Dataset,
    yc: &Array1<f64>,
    y_mean: f64,
    b: &Array2<f64>,
    scale: f64,
    etas: &[f64],
    thetas: &[f64],
    lambdas: &[f64],
) -> Result<Array3<f64>> {
    let mut out = Array3::<f64>::from_elem((etas.len(), thetas.len(), lambdas.len()), f64::NAN);
    let p = b.ncols();
    for (ti, &theta) in thetas.iter().enumerate() {
        let spec = KernelSpec::rbf(theta);
        let k = gram_self(&spec, dtr.x.view())?.values;
        let Ok((lam, q)) = sym_eig(&k) else { continue };
        let kvq = gram(&spec, dval.x.view(), dtr.x.view())?.values.dot(&q);
        let bt = q.t().dot(b);
        let yt = q.t().dot(yc);
        for (li, &lambda) in lambdas.iter().enumerate() {
            let d = lam.mapv(|v| 1.0 / (v.max(0.0) + lambda));
            let e = lam.mapv(|v| v.max(0.0)) * &d;
            let base = kvq.dot(&(&d * &yt)) + y_mean;
            let (gamma, wp, g1p) = if p > 0 {
                let be = &bt * &e.view().insert_axis(Axis(1));
                let c = crate::linalg::symmetrize(&bt.t().dot(&be));
                let wv = be.t().dot(&yt);
                let Ok((gamma, pm)) = sym_eig(&c) else { continue };
                let g1 = kvq.dot(&(&bt * &d.view().insert_axis(Axis(1))));
                (gamma.mapv(|g| g.max(0.0)), pm.t().dot(&wv), g1.dot(&pm))
            } else {
                (Array1::zeros(0), Array1::zeros(0), Array2::zeros((dval.n(), 0)))
            };
            for (ei, &eta) in etas.iter().enumerate() {
                let c = eta * scale;
                let pred = if c > 0.0 && p > 0 {
                    let z = Array1::from_iter(gamma.iter().zip(wp.iter()).map(|(g, w)| c / (1.0 + c * g) * w));
                    &base - &g1p.dot(&z)
                } else {
                    base.clone()
                };
                out[[ei, ti, li]] = rmse(pred.view(), dval.y.view()).unwrap_or(f64::NAN);
            }
        }
    }
    Ok(out)
}

/// Grid minimum of a (θ, λ) score slice; ties go to the smaller λ, then the
/// smaller θ.
fn pick(scores: ndarray::ArrayView2<f64>, thetas: &[f64], lambdas: &[f64]) -> Option<CvChoice> {
    let mut best: Option<CvChoice> = None;
    for (li, &lambda) in lambdas.iter().enumerate() {
        for (ti, &theta) in thetas.iter().enumerate() {
            let s = scores[[ti, li]];
            if s.is_finite() && best.map_or(true, |b| s < b.cv_rmse) {
                best = Some(CvChoice { theta, lambda, cv_rmse: s });
            }
        }
    }
    best
}

/// (θ, λ) with the lowest mean validation RMSE at fairness weight `eta`.
pub fn cv_select(
    train: &Dataset,
    method: Method,
    eta: f64,
    thetas: &[f64],
    lambdas: &[f64],
    settings: &CvSettings,
) -> Result<CvChoice> {
    let scores = cv_grid(train, method, &[eta], thetas, lambdas, settings)?;
    pick(scores.index_axis(Axis(0), 0), thetas, lambdas)
        .ok_or_else(|| FairError::Optimization("every CV grid point failed".into()))
}

fn theta_candidates(grid: &ThetaGrid, x: &Array2<f64>, seed: u64) -> Result<Vec<f64>> {
    match grid {
        ThetaGrid::Values(v) => Ok(v.clone()),
        ThetaGrid::Heuristic { draws, sigma_log } => {
            let med = median_heuristic(x.view())?;
            let mut rng = rng_for(seed, 0);
            let mut out = vec![med];
            for _ in 0..*draws {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.push(med * (sigma_log * z).exp());
            }
            out.sort_by(f64::total_cmp);
            out.dedup();
            Ok(out)
        }
    }
}

struct TrialSeeds {
    data: u64,
    folds: u64,
    theta: u64,
    restarts: u64,
}

fn trial_seeds(master: u64, trial: usize) -> TrialSeeds {
    let mut rng = rng_for(master, trial as u64 + 1);
    TrialSeeds { data: rng.next_u64(), folds: rng.next_u64(), theta: rng.next_u64(), restarts: rng.next_u64() }
}

fn preprocess(ds: &Dataset, p: Preprocess) -> Result<Dataset> {
    match p {
        Preprocess::None => Ok(ds.clone()),
        Preprocess::Osv => baseline_osv(ds),
        Preprocess::Frl => baseline_frl(ds),
    }
}

/// Loads file-backed data once; generators draw per trial.
fn load_source(source: &DataSource) -> Result<Option<Dataset>> {
    match source {
        DataSource::Csv { path, columns, standardize: st } => {
            let (ds, _) = load_csv(path, columns)?;
            Ok(Some(if *st { standardize(&ds)?.0 } else { ds }))
        }
        _ => Ok(None),
    }
}

/// Train and test sets of one trial. Generated data is a fresh draw of
/// `train + test` rows; file data is a seeded split. Baselines are applied
/// before splitting.
fn trial_data(source: &DataSource, loaded: Option<&Dataset>, spec: &SweepSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = spec.split.train + spec.split.test;
    let full = match source {
        DataSource::Toy1(cfg) => gen_toy1(&Toy1Config { n, seed, ..*cfg })?,
        DataSource::Toy2(cfg) => gen_toy2(&Toy2Config { n, seed, ..*cfg })?,
        DataSource::Csv { .. } => {
            let ds = preprocess(loaded.expect("file data loaded"), spec.preprocess)?;
            return train_test_split(&ds, spec.split.train, spec.split.test, seed);
        }
    };
    let full = preprocess(&full, spec.preprocess)?;
    let idx: Vec<usize> = (0..n).collect();
    Ok((full.subset(&idx[..spec.split.train]), full.subset(&idx[spec.split.train..])))
}

fn sensitive_kernel(spec: &SweepSpec, train: &Dataset) -> Result<KernelSpec> {
    Ok(KernelSpec::rbf(match spec.theta_l {
        Some(t) => t,
        None => median_heuristic(train.s.view())?,
    }))
}

struct Evaluation<'a> {
    test: &'a Dataset,
    auditor: DependenceAuditor,
}

impl Evaluation<'_> {
    fn record(&self, trial: usize, eta: f64, pred: &Array1<f64>, theta: f64, lambda: f64) -> Result<SweepRecord> {
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(FairError::NonFinite("test predictions"));
        }
        let dep = self.auditor.report(pred.view())?;
        Ok(SweepRecord {
            trial,
            eta,
            rmse: rmse(pred.view(), self.test.y.view())?,
            r2_obs: r_squared(pred.view(), self.test.y.view())?,
            r2_true: self.test.f_true.as_ref().map(|f| r_squared(pred.view(), f.view())).transpose()?,
            hsic: dep.hsic,
            nocco: dep.nocco,
            mi: dep.mi,
            corr_sensitive: dep.corr,
            theta,
            lambda,
            nlml: None,
            delta: None,
        })
    }
}

fn erm_cell(
    spec: &SweepSpec,
    train: &Dataset,
    ev: &Evaluation<'_>,
    kernel_s: &KernelSpec,
    trial: usize,
    eta: f64,
    choice: CvChoice,
) -> Result<SweepRecord> {
    let kx = KernelSpec::rbf(choice.theta);
    let pred = match spec.method {
        Method::Krr | Method::Fkl => {
            let eff = if spec.method == Method::Krr { 0.0 } else { eta };
            let cfg = FairKrrConfig::new(choice.lambda, eff, kx, kernel_s.clone());
            predict_fkl(&fit_fkl(train.x.view(), train.y.view(), train.s.view(), &cfg)?, ev.test.x.view())?
        }
        Method::Nfkl => {
            let mut cfg = NfklConfig::from_scaled_lambda(choice.lambda, train.n(), eta, kx, kernel_s.clone());
            cfg.eps = spec.eps;
            predict_nfkl(&fit_nfkl(train.x.view(), train.y.view(), train.s.view(), &cfg)?, ev.test.x.view())?
        }
        _ => unreachable!("GP methods take the likelihood route"),
    };
    ev.record(trial, eta, &pred, choice.theta, choice.lambda)
}

fn gp_cell(
    spec: &SweepSpec,
    train: &Dataset,
    ev: &Evaluation<'_>,
    kernel_s: &KernelSpec,
    trial: usize,
    eta: f64,
    seed: u64,
) -> Result<SweepRecord> {
    let med = median_heuristic(train.x.view())?;
    let kernel_x = if spec.gp.ard { KernelSpec::ard(vec![med; train.x.ncols()]) } else { KernelSpec::rbf(med) };
    let mut cfg = FairGpConfig::new(kernel_x, kernel_s.clone(), spec.gp.initial_noise, 0.0);
    cfg.optimizer = OptimizerSettings {
        restarts: spec.gp.restarts,
        max_iters: spec.gp.max_iters,
        seed,
        fixed_params: vec![HyperName::ThetaL, HyperName::Delta],
        tie_eta: (spec.method == Method::FairGp && eta > 0.0).then_some(eta),
        ..OptimizerSettings::default()
    };
    let report = optimize_hyperparams(train.x.view(), train.y.view(), train.s.view(), &cfg)?;
    let model = gp_fit(train.x.view(), train.y.view(), train.s.view(), &report.config)?;
    let (mean, _) = posterior_predict(&model, ev.test.x.view())?;
    let theta = match &report.config.kernel_x {
        KernelSpec::Rbf { lengthscale } => *lengthscale,
        KernelSpec::ArdRbf { lengthscales } => {
            (lengthscales.iter().map(|l| l.ln()).sum::<f64>() / lengthscales.len() as f64).exp()
        }
        KernelSpec::Linear => f64::NAN,
    };
    let mut rec = ev.record(trial, eta, &mean, theta, report.config.noise)?;
    rec.nlml = Some(model.nlml);
    rec.delta = Some(report.config.delta);
    Ok(rec)
}

fn run_trial(spec: &SweepSpec, source: &DataSource, loaded: Option<&Dataset>, trial: usize, curve: &mut TradeoffCurve) -> Result<()> {
    let seeds = trial_seeds(spec.seed, trial);
    let (train, test) = trial_data(source, loaded, spec, seeds.data)?;
    let kernel_s = sensitive_kernel(spec, &train)?;
    let l_test = gram_self(&kernel_s, test.s.view())?.values;
    let ev = Evaluation { test: &test, auditor: DependenceAuditor::new(&l_test, test.s.view(), spec.eps, DEFAULT_MI_BINS)? };

    if spec.method.is_gp() {
        for &eta in &spec.eta_grid {
            match gp_cell(spec, &train, &ev, &kernel_s, trial, eta, seeds.restarts) {
                Ok(r) => curve.records.push(r),
                Err(e) => curve.errors.push(CellError { trial, eta: Some(eta), message: e.to_string() }),
            }
        }
        return Ok(());
    }
    let thetas = theta_candidates(&spec.theta_grid, &train.x, seeds.theta)?;
    let settings = CvSettings { folds: spec.folds, seed: seeds.folds, kernel_s: kernel_s.clone(), eps: spec.eps };
    let scores = cv_grid(&train, spec.method, &spec.eta_grid, &thetas, &spec.lambda_grid, &settings)?;
    for (ei, &eta) in spec.eta_grid.iter().enumerate() {
        let cell = pick(scores.index_axis(Axis(0), ei), &thetas, &spec.lambda_grid)
            .ok_or_else(|| FairError::Optimization("every CV grid point failed".into()))
            .and_then(|choice| erm_cell(spec, &train, &ev, &kernel_s, trial, eta, choice));
        match cell {
            Ok(r) => curve.records.push(r),
            Err(e) => curve.errors.push(CellError { trial, eta: Some(eta), message: e.to_string() }),
        }
    }
    Ok(())
}

/// Runs every (trial, η) cell. A failing cell is recorded in `errors`; a
/// failing trial setup records one error with `eta = None`.
pub fn run_sweep(spec: &SweepSpec, source: &DataSource) -> Result<TradeoffCurve> {
    run_sweep_with_progress(spec, source, |_| {})
}

/// As [`run_sweep`], calling `progress` with a one-line message per trial.
pub fn run_sweep_with_progress(spec: &SweepSpec, source: &DataSource, mut progress: impl FnMut(&str)) -> Result<TradeoffCurve> {
    spec.validate()?;
    let loaded = load_source(source)?;
    let mut curve = TradeoffCurve::default();
    for trial in 0..spec.trials {
        if let Err(e) = run_trial(spec, source, loaded.as_ref(), trial, &mut curve) {
            curve.errors.push(CellError { trial, eta: None, message: e.to_string() });
        }
        progress(&format!("{}: trial {}/{} done", spec.label(), trial + 1, spec.trials));
    }
    curve.records.sort_by(|a, b| a.trial.cmp(&b.trial).then(a.eta.total_cmp(&b.eta)));
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    #[serde(flatten)]
    pub row: AggregateRow,
}

/// Sweeps each spec on the same data draws and stacks the aggregated rows.
pub fn compare_methods(specs: &[SweepSpec], source: &DataSource) -> Result<Vec<ComparisonRow>> {
    let Some(first) = specs.first() else {
        return Err(FairError::Config("no methods to compare".into()));
    };
    for s in specs {
        if s.seed != first.seed || s.split != first.split || s.trials != first.trials {
            return Err(FairError::Config("compared specs must share seed, split and trial count".into()));
        }
    }
    let mut rows = Vec::new();
    for s in specs {
        let curve = run_sweep(s, source)?;
        rows.extend(curve.aggregate().into_iter().map(|row| ComparisonRow { label: s.label(), row }));
    }
    Ok(rows)
}

/// Plain-text table of `mean ± stderr` per method and η.
pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let fmt = |s: &Summary| format!("{:.4} ± {:.4}", s.mean, s.stderr);
    let mut out = format!(
        "{:<12} {:>10} {:>18} {:>18} {:>18} {:>18} {:>18}\n",
        "method", "eta", "rmse", "r2_obs", "r2_true", "hsic", "corr_sensitive"
    );
    for r in rows {
        let a = &r.row;
        out.push_str(&format!(
            "{:<12} {:>10.3e} {:>18} {:>18} {:>18} {:>18} {:>18}\n",
            r.label,
            a.eta,
            fmt(&a.rmse),
            fmt(&a.r2_obs),
            a.r2_true.as_ref().map_or("-".to_string(), fmt),
            fmt(&a.hsic),
            fmt(&a.corr_sensitive)
        ));
    }
    out
}

/// Area under the piecewise-linear RMSE-vs-HSIC curve over `[lo, hi]`.
pub fn tradeoff_area(points: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let at = |h: f64| -> f64 {
        if h <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            if h <= w[1].0 {
                let span = w[1].0 - w[0].0;
                return if span > 0.0 { w[0].1 + (w[1].1 - w[0].1) * (h - w[0].0) / span } else { w[1].1 };
            }
        }
        pts[pts.len() - 1].1
    };
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).filter(|&h| h > lo && h < hi).collect();
    xs.push(lo);
    xs.push(hi);
    xs.sort_by(f64::total_cmp);
    xs.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (at(w[0]) + at(w[1]))).sum()
}
