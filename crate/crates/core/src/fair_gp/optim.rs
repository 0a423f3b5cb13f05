//! Marginal-likelihood hyperparameter search.
//!
//! Hyperparameters are searched in natural-log space inside box bounds with a
//! projected quasi-Newton method (BFGS with Armijo backtracking). Gradients
//! are analytic: with `Σ = C* + λI`, `a = Σ⁻¹y` and `W = Σ⁻¹ - aaᵀ`,
//! `∂NLML/∂ψ = ½ Tr(W ∂Σ/∂ψ)`, and a change of the base kernel moves the
//! fair prior as `dC* = P dK Pᵀ` with `P = C*K⁻¹ = I - KB S⁻¹Bᵀ`.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{nlml_from, prepare_targets, FairGpConfig, FairPrior, FACTOR_CUT};
use crate::error::{FairError, Result};
use crate::fair_krr::check_rows;
use crate::kernels::{center_gram, gram_self, KernelSpec};
use crate::linalg::{psd_factor, PdFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperName {
    /// All lengthscales of the input kernel.
    ThetaX,
    /// Lengthscale of the sensitive kernel.
    ThetaL,
    Noise,
    Delta,
}

/// Natural-log bounds per hyperparameter family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogBounds {
    pub theta_x: (f64, f64),
    pub theta_l: (f64, f64),
    pub noise: (f64, f64),
    pub delta: (f64, f64),
}

impl Default for LogBounds {
    fn default() -> Self {
        Self {
            theta_x: (1e-2f64.ln(), 1e4f64.ln()),
            theta_l: (1e-2f64.ln(), 1e2f64.ln()),
            noise: (1e-6f64.ln(), 1e1f64.ln()),
            delta: (1e-8f64.ln(), 1e6f64.ln()),
        }
    }
}

impl LogBounds {
    fn get(&self, name: HyperName) -> (f64, f64) {
        match name {
            HyperName::ThetaX => self.theta_x,
            HyperName::ThetaL => self.theta_l,
            HyperName::Noise => self.noise,
            HyperName::Delta => self.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub restarts: usize,
    pub max_iters: usize,
    pub log_bounds: LogBounds,
    pub seed: u64,
    pub fixed_params: Vec<HyperName>,
    /// When set, δ is tied to the noise as `δ = η/(λn)` for this η.
    pub tie_eta: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_iters: 100,
            log_bounds: LogBounds::default(),
            seed: 0,
            fixed_params: vec![HyperName::ThetaL, HyperName::Delta],
            tie_eta: None,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(FairError::InvalidParameter("restarts and max_iters must be positive".into()));
        }
        for name in [HyperName::ThetaX, HyperName::ThetaL, HyperName::Noise, HyperName::Delta] {
            let (lo, hi) = self.log_bounds.get(name);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(FairError::InvalidParameter(format!("invalid log bounds for {name:?}: ({lo}, {hi})")));
            }
        }
        if let Some(eta) = self.tie_eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(FairError::InvalidParameter(format!("tied eta must be non-negative, got {eta}")));
            }
        }
        Ok(())
    }

    fn is_free(&self, name: HyperName) -> bool {
        !self.fixed_params.contains(&name)
    }
}

/// One hyperparameter coordinate in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    ThetaX(usize),
    ThetaL,
    Noise,
    Delta,
}

fn slot_name(slot: Slot) -> String {
    match slot {
        Slot::ThetaX(i) => format!("theta_x[{i}]"),
        Slot::ThetaL => "theta_l".into(),
        Slot::Noise => "noise".into(),
        Slot::Delta => "delta".into(),
    }
}

fn theta_x_count(kernel: &KernelSpec) -> usize {
    match kernel {
        KernelSpec::Linear => 0,
        KernelSpec::Rbf { .. } => 1,
        KernelSpec::ArdRbf { lengthscales } => lengthscales.len(),
    }
}

/// All hyperparameter slots present for a config, with `tied` removing δ.
fn all_slots(config: &FairGpConfig, tied: bool) -> Vec<Slot> {
    let mut slots: Vec<Slot> = (0..theta_x_count(&config.kernel_x)).map(Slot::ThetaX).collect();
    if matches!(config.kernel_s, KernelSpec::Rbf { .. }) {
        slots.push(Slot::ThetaL);
    }
    slots.push(Slot::Noise);
    if !tied {
        slots.push(Slot::Delta);
    }
    slots
}

fn family(slot: Slot) -> HyperName {
    match slot {
        Slot::ThetaX(_) => HyperName::ThetaX,
        Slot::ThetaL => HyperName::ThetaL,
        Slot::Noise => HyperName::Noise,
        Slot::Delta => HyperName::Delta,
    }
}

fn get_value(config: &FairGpConfig, slot: Slot) -> f64 {
    match (slot, &config.kernel_x, &config.kernel_s) {
        (Slot::ThetaX(_), KernelSpec::Rbf { lengthscale }, _) => *lengthscale,
        (Slot::ThetaX(i), KernelSpec::ArdRbf { lengthscales }, _) => lengthscales[i],
        (Slot::ThetaL, _, KernelSpec::Rbf { lengthscale }) => *lengthscale,
        (Slot::Noise, _, _) => config.noise,
        (Slot::Delta, _, _) => config.delta,
        _ => f64::NAN,
    }
}

fn set_value(config: &mut FairGpConfig, slot: Slot, value: f64) {
    match (slot, &mut config.kernel_x, &mut config.kernel_s) {
        (Slot::ThetaX(_), KernelSpec::Rbf { lengthscale }, _) => *lengthscale = value,
        (Slot::ThetaX(i), KernelSpec::ArdRbf { lengthscales }, _) => lengthscales[i] = value,
        (Slot::ThetaL, _, KernelSpec::Rbf { lengthscale }) => *lengthscale = value,
        (Slot::Noise, _, _) => config.noise = value,
        (Slot::Delta, _, _) => config.delta = value,
        _ => {}
    }
}

struct SensitiveCache {
    kernel: KernelSpec,
    l: Array2<f64>,
    b: Array2<f64>,
}

/// Evaluates the NLML and its log-space gradient on one dataset.
struct Evaluator<'a, 'b> {
    x: ArrayView2<'a, f64>,
    s: ArrayView2<'b, f64>,
    y: Array1<f64>,
    tie_eta: Option<f64>,
    cache: RefCell<Option<Rc<SensitiveCache>>>,
}

struct Evaluation {
    nlml: f64,
    /// Gradient for each requested slot, in order.
    grad: Vec<f64>,
}

impl<'a, 'b> Evaluator<'a, 'b> {
    fn new(x: ArrayView2<'a, f64>, y: ArrayView1<f64>, s: ArrayView2<'b, f64>, config: &FairGpConfig) -> Result<Self> {
        check_rows(&x, &y, &s)?;
        config.kernel_x.validate(Some(x.ncols()))?;
        let (yc, _) = prepare_targets(y, config.center_targets);
        Ok(Self { x, s, y: yc, tie_eta: config.optimizer.tie_eta, cache: RefCell::new(None) })
    }

    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn sensitive(&self, kernel: &KernelSpec) -> Result<Rc<SensitiveCache>> {
        if let Some(c) = self.cache.borrow().as_ref() {
            if &c.kernel == kernel {
                return Ok(Rc::clone(c));
            }
        }
        let l = gram_self(kernel, self.s)?.values;
        let (b, _) = psd_factor(&center_gram(&l)?, FACTOR_CUT)?;
        let c = Rc::new(SensitiveCache { kernel: kernel.clone(), l, b });
        *self.cache.borrow_mut() = Some(Rc::clone(&c));
        Ok(c)
    }

    fn effective_delta(&self, config: &FairGpConfig) -> f64 {
        match self.tie_eta {
            Some(eta) => FairGpConfig::delta_for_eta(eta, config.noise, self.n()),
            None => config.delta,
        }
    }

    fn evaluate(&self, config: &FairGpConfig, slots: &[Slot]) -> Result<Evaluation> {
        config.validate()?;
        let n = self.n();
        let delta = self.effective_delta(config);
        let lam = config.noise;
        let k = gram_self(&config.kernel_x, self.x)?.values;
        let sens = self.sensitive(&config.kernel_s)?;
        let prior = FairPrior::new(k, sens.b.clone(), delta)?;
        let mut sigma = prior.gram().clone();
        sigma.diag_mut().mapv_inplace(|v| v + lam);
        let factor = PdFactor::new(&sigma)?;
        let alpha = factor.solve_vec(&self.y)?;
        let nlml = nlml_from(&factor, &self.y, &alpha);
        if !nlml.is_finite() {
            return Err(FairError::NonFinite("negative log marginal likelihood"));
        }
        if slots.is_empty() {
            return Ok(Evaluation { nlml, grad: Vec::new() });
        }

        // W = Σ⁻¹ - aaᵀ
        let mut w = factor.inverse()?;
        for i in 0..n {
            for j in 0..n {
                w[[i, j]] -= alpha[i] * alpha[j];
            }
        }
        let fair = prior.inner().is_some();

        // Tr(W C* M C*) = Σ (G ∘ WG) with G = C*B
        let needs_t = fair && slots.iter().any(|s| matches!(s, Slot::Delta) || (matches!(s, Slot::Noise) && self.tie_eta.is_some()));
        let trace_wcmc = if needs_t {
            let g = prior.gram().dot(prior.factor());
            let wg = w.dot(&g);
            (&g * &wg).sum()
        } else {
            0.0
        };

        let needs_theta_x = slots.iter().any(|s| matches!(s, Slot::ThetaX(_)));
        let theta_x_grad = if needs_theta_x { self.theta_x_gradient(config, &prior, &w)? } else { Vec::new() };

        let mut grad = Vec::with_capacity(slots.len());
        for &slot in slots {
            let g = match slot {
                Slot::ThetaX(i) => theta_x_grad[i],
                Slot::Noise => {
                    let mut t = lam * w.diag().sum();
                    if self.tie_eta.is_some() {
                        t += delta * trace_wcmc;
                    }
                    0.5 * t
                }
                Slot::Delta => -0.5 * delta * trace_wcmc,
                Slot::ThetaL => {
                    if fair {
                        self.theta_l_gradient(config, &prior, &w, &sens, delta)?
                    } else {
                        0.0
                    }
                }
            };
            grad.push(g);
        }
        Ok(Evaluation { nlml, grad })
    }

    /// ½ Tr(W̃ dK) per input lengthscale, with `W̃ = PᵀWP`.
    fn theta_x_gradient(&self, config: &FairGpConfig, prior: &FairPrior, w: &Array2<f64>) -> Result<Vec<f64>> {
        let wt = match prior.inner() {
            None => w.clone(),
            Some(inner) => {
                // P = I - KB S⁻¹Bᵀ; Q = S⁻¹Bᵀ
                let q = inner.solve_mat(&prior.factor().t())?;
                let kb = prior.kb();
                let wp = w - &w.dot(kb).dot(&q);
                &wp - &q.t().dot(&kb.t().dot(&wp))
            }
        };
        // A = W̃ ∘ K; Σ_ij A_ij (x_ik - x_jk)² = 2 Σ_i x_ik² r_i - 2 Σ_i x_ik (AX)_ik
        let a = &wt * prior.base_gram();
        let r = a.sum_axis(Axis(1));
        let ax = a.dot(&self.x);
        let d = self.x.ncols();
        let mut per_dim = vec![0.0; d];
        for (kk, pd) in per_dim.iter_mut().enumerate() {
            let col = self.x.column(kk);
            let mut acc = 0.0;
            for i in 0..col.len() {
                acc += col[i] * col[i] * r[i] - col[i] * ax[[i, kk]];
            }
            *pd = 2.0 * acc;
        }
        // dK/dlogθ = K ∘ 2D/θ², so ½Tr(W̃ dK) = Σ_ij A_ij D_ij / θ²
        Ok(match &config.kernel_x {
            KernelSpec::Linear => Vec::new(),
            KernelSpec::Rbf { lengthscale } => vec![per_dim.iter().sum::<f64>() / (lengthscale * lengthscale)],
            KernelSpec::ArdRbf { lengthscales } => per_dim.iter().zip(lengthscales).map(|(v, t)| v / (t * t)).collect(),
        })
    }

    /// ½ Tr(W dC*) for the sensitive lengthscale: `dC* = -δ C* H dL H C*`.
    fn theta_l_gradient(&self, config: &FairGpConfig, prior: &FairPrior, w: &Array2<f64>, sens: &SensitiveCache, delta: f64) -> Result<f64> {
        let theta = match config.kernel_s {
            KernelSpec::Rbf { lengthscale } => lengthscale,
            _ => return Ok(0.0),
        };
        let c = prior.gram();
        let q = center_gram(&c.dot(w).dot(c))?;
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            let si = self.s.row(i);
            for j in 0..n {
                let sj = self.s.row(j);
                let d2: f64 = si.iter().zip(sj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                acc += q[[i, j]] * sens.l[[i, j]] * 2.0 * d2 / (theta * theta);
            }
        }
        Ok(-0.5 * delta * acc)
    }
}

/// NLML and its gradient with respect to the natural log of every
/// hyperparameter present in `config` (δ is omitted when tied to η).
pub fn nlml_gradient(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    s: ArrayView2<f64>,
    config: &FairGpConfig,
) -> Result<(f64, Vec<(String, f64)>)> {
    let ev = Evaluator::new(x, y, s, config)?;
    let slots = all_slots(config, config.optimizer.tie_eta.is_some());
    let out = ev.evaluate(config, &slots)?;
    Ok((out.nlml, slots.iter().map(|&s| slot_name(s)).zip(out.grad).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub start_log_params: Vec<f64>,
    pub start_nlml: Option<f64>,
    pub final_nlml: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub config: FairGpConfig,
    pub nlml: f64,
    pub best_restart: usize,
    pub param_names: Vec<String>,
    pub log_params: Vec<f64>,
    /// Analytic gradient at the returned point.
    pub gradient: Vec<f64>,
    pub restarts: Vec<RestartRecord>,
}

struct MinOutcome {
    x: Vec<f64>,
    f: f64,
    grad: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn clamp(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Projected BFGS with Armijo backtracking inside a box.
fn projected_bfgs<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], max_iters: usize) -> Result<MinOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d = x0.len();
    let mut x = x0.to_vec();
    clamp(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let mut hinv = Array2::<f64>::eye(d);
    let mut converged = false;
    let mut iterations = 0;
    let bound_tol = 1e-12;

    while iterations < max_iters {
        iterations += 1;
        let active: Vec<bool> = (0..d)
            .map(|i| (x[i] <= lo[i] + bound_tol && g[i] > 0.0) || (x[i] >= hi[i] - bound_tol && g[i] < 0.0))
            .collect();
        let pg = (0..d).filter(|&i| !active[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg < 1e-6 * fx.abs().max(1.0) {
            converged = true;
            break;
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                hinv = Array2::eye(d);
            }
            let gv = Array1::from_iter((0..d).map(|i| if active[i] { 0.0 } else { g[i] }));
            let mut dir = -hinv.dot(&gv);
            for i in 0..d {
                if active[i] {
                    dir[i] = 0.0;
                }
            }
            if gv.dot(&dir) >= 0.0 {
                dir = -gv.clone();
            }
            let biggest = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if biggest > 2.0 {
                dir *= 2.0 / biggest;
            }
            let mut t = 1.0;
            for _ in 0..40 {
                let mut xn: Vec<f64> = (0..d).map(|i| x[i] + t * dir[i]).collect();
                clamp(&mut xn, lo, hi);
                let decrease: f64 = (0..d).map(|i| g[i] * (xn[i] - x[i])).sum();
                if let Ok((fn_, gn)) = f(&xn) {
                    if fn_ <= fx + 1e-4 * decrease && decrease < 0.0 {
                        accepted = Some((xn, fn_, gn));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((xn, fn_, gn)) = accepted else {
            // no descent possible along the projected direction
            converged = pg < 1e-3 * fx.abs().max(1.0);
            break;
        };
        let s = Array1::from_iter((0..d).map(|i| xn[i] - x[i]));
        let yv = Array1::from_iter((0..d).map(|i| gn[i] - g[i]));
        let sy = s.dot(&yv);
        if sy > 1e-10 {
            let rho = 1.0 / sy;
            let hy = hinv.dot(&yv);
            let yhy = yv.dot(&hy);
            let so = s.view().insert_axis(Axis(1));
            let hyo = hy.view().insert_axis(Axis(1));
            let ss = so.dot(&so.t());
            let shy = so.dot(&hyo.t());
            hinv = &hinv + &(ss * ((1.0 + rho * yhy) * rho)) - &((&shy + &shy.t()) * rho);
        }
        let small_change = (fx - fn_).abs() < 1e-12 * fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        if small_change {
            converged = true;
            break;
        }
    }
    Ok(MinOutcome { x, f: fx, grad: g, iterations, converged })
}

/// Multi-start marginal-likelihood maximization. Restart 0 starts from the
/// values in `config`; the others start from seeded uniform draws over the
/// log bounds. The best restart wins, ties broken by lower index.
pub fn optimize_hyperparams(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    s: ArrayView2<f64>,
    config: &FairGpConfig,
) -> Result<OptimizationReport> {
    config.validate()?;
    let settings = &config.optimizer;
    settings.validate()?;
    let ev = Evaluator::new(x, y, s, config)?;
    let tied = settings.tie_eta.is_some();
    let slots: Vec<Slot> = all_slots(config, tied).into_iter().filter(|&s| settings.is_free(family(s))).collect();
    if slots.is_empty() {
        return Err(FairError::Optimization("no free hyperparameters".into()));
    }
    let lo: Vec<f64> = slots.iter().map(|&s| settings.log_bounds.get(family(s)).0).collect();
    let hi: Vec<f64> = slots.iter().map(|&s| settings.log_bounds.get(family(s)).1).collect();

    let build = |z: &[f64]| {
        let mut c = config.clone();
        for (&slot, &v) in slots.iter().zip(z) {
            set_value(&mut c, slot, v.exp());
        }
        if let Some(eta) = settings.tie_eta {
            c.delta = FairGpConfig::delta_for_eta(eta, c.noise, ev.n());
        }
        c
    };
    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let out = ev.evaluate(&build(z), &slots)?;
        Ok((out.nlml, out.grad))
    };

    let mut records = Vec::with_capacity(settings.restarts);
    let mut best: Option<(usize, MinOutcome)> = None;
    for r in 0..settings.restarts {
        let mut start: Vec<f64> = if r == 0 {
            slots.iter().map(|&s| get_value(config, s).ln()).collect()
        } else {
            let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
            rng.set_stream(r as u64);
            (0..slots.len()).map(|i| rng.gen_range(lo[i]..hi[i])).collect()
        };
        clamp(&mut start, &lo, &hi);
        let mut rec = RestartRecord {
            index: r,
            start_log_params: start.clone(),
            start_nlml: None,
            final_nlml: None,
            iterations: 0,
            converged: false,
            error: None,
        };
        match ev.evaluate(&build(&start), &[]) {
            Ok(e) => rec.start_nlml = Some(e.nlml),
            Err(e) => {
                rec.error = Some(e.to_string());
                records.push(rec);
                continue;
            }
        }
        match projected_bfgs(&objective, &start, &lo, &hi, settings.max_iters) {
            Ok(out) => {
                rec.final_nlml = Some(out.f);
                rec.iterations = out.iterations;
                rec.converged = out.converged;
                let better = match &best {
                    None => true,
                    Some((_, b)) => out.f < b.f,
                };
                if better {
                    best = Some((r, out));
                }
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        records.push(rec);
    }

    let Some((best_restart, out)) = best else {
        return Err(FairError::Optimization(format!(
            "all {} restarts failed; first error: {}",
            records.len(),
            records.iter().find_map(|r| r.error.clone()).unwrap_or_default()
        )));
    };
    Ok(OptimizationReport {
        config: build(&out.x),
        nlml: out.f,
        best_restart,
        param_names: slots.iter().map(|&s| slot_name(s)).collect(),
        log_params: out.x,
        gradient: out.grad,
        restarts: records,
    })
}
