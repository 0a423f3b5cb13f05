//! Acceptance run: one PASS/FAIL/SKIP line per criterion.
//!
//! Oracles here are written independently of the library code paths they
//! check. Criterion 10 needs the communities-and-crime data file and runs
//! only when `FAIRKERN_CRIME_DATA` points at it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fairkern::cli::{cmd_tradeoff, OutputFormat, RunConfig, TradeoffArgs};
use fairkern::datasets::{gen_toy1, load_csv, rng_for, standardize, train_test_split, CsvSpec, Toy1Config, Toy2Config};
use fairkern::experiments::{log_grid, tradeoff_area, DataSource, GpSweepSettings, Method, Preprocess, Split, SweepRecord, SweepSpec, ThetaGrid};
use fairkern::fair_gp::{
    fair_prior_gram_dense, gp_fit, nlml_gradient, optimize_hyperparams, posterior_predict, unfairness, FairGpConfig,
    OptimizerSettings, PriorForm,
};
use fairkern::fair_krr::{fit_fkl, predict_fkl, FairKrrConfig};
use fairkern::kernels::{median_heuristic, KernelSpec};
use fairkern::metrics::{hsic, rmse};
use fairkern::nfkl::{fit_nfkl, predict_nfkl, NfklConfig};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{Eigh, Inverse, Solve, UPLO};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Self { pass: Some(pass), detail }
    }

    fn skip(detail: &str) -> Self {
        Self { pass: None, detail: detail.into() }
    }
}

fn normals(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn rbf(a: ArrayView2<f64>, b: ArrayView2<f64>, theta: f64) -> Array2<f64> {
    let mut k = Array2::zeros((a.nrows(), b.nrows()));
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let mut d2 = 0.0;
            for c in 0..a.ncols() {
                d2 += (a[[i, c]] - b[[j, c]]).powi(2);
            }
            k[[i, j]] = (-d2 / (theta * theta)).exp();
        }
    }
    k
}

/// `HLH` by explicit row and column mean removal.
fn double_center(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let rows = l.mean_axis(Axis(1)).unwrap();
    let cols = l.mean_axis(Axis(0)).unwrap();
    let all = l.mean().unwrap();
    Array2::from_shape_fn((n, n), |(i, j)| l[[i, j]] - rows[i] - cols[j] + all)
}

fn max_abs(a: &Array1<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn largest_eig(a: &Array2<f64>) -> f64 {
    let (vals, _) = a.eigh(UPLO::Lower).unwrap();
    vals[vals.len() - 1]
}

fn centered(y: &Array1<f64>) -> Array1<f64> {
    y - y.mean().unwrap()
}

// ---------------------------------------------------------------- 1

/// Expanded three-term form of the biased HSIC estimator.
fn hsic_expanded(k: &Array2<f64>, l: &Array2<f64>) -> f64 {
    let n = k.nrows();
    let nf = n as f64;
    let (mut a, mut sk, mut sl, mut c) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            a += k[[i, j]] * l[[i, j]];
            sk += k[[i, j]];
            sl += l[[i, j]];
            for q in 0..n {
                c += k[[i, j]] * l[[i, q]];
            }
        }
    }
    a / (nf * nf) + sk * sl / nf.powi(4) - 2.0 * c / nf.powi(3)
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = rng_for(seed, 1);
        let n = rng.gen_range(2..=20);
        let x = normals(&mut rng, n, 2);
        let s = normals(&mut rng, n, 1);
        let k = rbf(x.view(), x.view(), rng.gen_range(0.3..3.0));
        let l = rbf(s.view(), s.view(), rng.gen_range(0.3..3.0));
        let got = hsic(k.view(), l.view()).unwrap();
        worst = worst.max((got - hsic_expanded(&k, &l)).abs());
    }
    Outcome::check(worst <= 1e-12, format!("max |trace - expanded| = {worst:.2e} over 100 instances (tol 1e-12)"))
}

// ---------------------------------------------------------------- 2

fn fkl_value(k: &Array2<f64>, m: &Array2<f64>, y: &Array1<f64>, alpha: &Array1<f64>, lambda: f64, eta: f64) -> f64 {
    let n = y.len() as f64;
    let f = k.dot(alpha);
    let r = &f - y;
    r.dot(&r) / n + lambda / n * alpha.dot(&f) + eta / (n * n) * f.dot(&m.dot(&f))
}

/// Accelerated gradient descent on the objective, with gradients taken in
/// the RKHS metric: the step direction is `(K + λI + (η/n)MK)α - y`.
fn fkl_descent(k: &Array2<f64>, m: &Array2<f64>, y: &Array1<f64>, lambda: f64, eta: f64) -> (Array1<f64>, usize) {
    let n = y.len();
    let big = largest_eig(k) * (1.0 + eta * largest_eig(m).max(0.0) / n as f64) + lambda;
    let step = 1.0 / big;
    let q = (lambda / big).sqrt();
    let momentum = (1.0 - q) / (1.0 + q);
    let mk = m.dot(k) * (eta / n as f64);
    let resid = |a: &Array1<f64>| k.dot(a) + a * lambda + mk.dot(a) - y;
    let mut alpha = Array1::zeros(n);
    let mut z = alpha.clone();
    for it in 0..2_000_000 {
        let r = resid(&z);
        if max_abs(&r) < 1e-13 {
            return (z, it);
        }
        let next = &z - &(r * step);
        z = &next + &((&next - &alpha) * momentum);
        alpha = next;
    }
    (alpha, 2_000_000)
}

fn criterion_2() -> Outcome {
    let (mut gap_worst, mut above, mut iter_worst, mut steps) = (0.0f64, 0usize, 0.0f64, 0usize);
    for seed in 0..50 {
        let mut rng = rng_for(seed, 2);
        let n = rng.gen_range(5..=30);
        let x = normals(&mut rng, n, 2);
        let s = normals(&mut rng, n, 1);
        let y = Array1::from_shape_fn(n, |i| x[[i, 0]].sin() + 0.5 * s[[i, 0]]) + &normals(&mut rng, n, 1).column(0) * 0.1;
        let lambda = 10f64.powf(rng.gen_range(-2.0..0.0));
        let eta = 10f64.powf(rng.gen_range(-2.0..2.0));
        let k = rbf(x.view(), x.view(), 1.0);
        let m = double_center(&rbf(s.view(), s.view(), 1.0));
        let yc = centered(&y);

        let model = fit_fkl(x.view(), y.view(), s.view(), &FairKrrConfig::new(lambda, eta, KernelSpec::rbf(1.0), KernelSpec::rbf(1.0))).unwrap();
        let (gd, it) = fkl_descent(&k, &m, &yc, lambda, eta);
        steps = steps.max(it);
        let closed = fkl_value(&k, &m, &yc, &model.alpha, lambda, eta);
        let oracle = fkl_value(&k, &m, &yc, &gd, lambda, eta);
        gap_worst = gap_worst.max((closed - oracle).abs());
        // roundoff allowance for evaluating two equal minima
        if closed > oracle + 1e-12 {
            above += 1;
        }
        iter_worst = iter_worst.max(max_abs(&(&model.alpha - &gd)));
    }
    Outcome::check(
        gap_worst <= 1e-8 && above == 0 && iter_worst <= 1e-5,
        format!(
            "objective gap {gap_worst:.2e} (tol 1e-8), closed form above oracle in {above}/50, iterate diff {iter_worst:.2e} (tol 1e-5), up to {steps} descent steps"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..50 {
        for &n in &[10usize, 30, 50] {
            for &eta in &[0.01, 1.0, 100.0] {
                let mut rng = rng_for(seed, 3 + n as u64 * 7);
                let x = normals(&mut rng, n, 2);
                let s = normals(&mut rng, n, 1);
                let y = Array1::from_shape_fn(n, |i| x[[i, 0]] + x[[i, 1]].cos() + 0.8 * s[[i, 0]]);
                let xs = normals(&mut rng, 15, 2);
                let lambda = 0.1;
                let kx = KernelSpec::rbf(1.2);
                let ks = KernelSpec::rbf(0.8);
                let fkl = fit_fkl(x.view(), y.view(), s.view(), &FairKrrConfig::new(lambda, eta, kx.clone(), ks.clone())).unwrap();
                let a = predict_fkl(&fkl, xs.view()).unwrap();
                let cfg = FairGpConfig::new(kx, ks, lambda, FairGpConfig::delta_for_eta(eta, lambda, n));
                let gp = gp_fit(x.view(), y.view(), s.view(), &cfg).unwrap();
                let (b, _) = posterior_predict(&gp, xs.view()).unwrap();
                let rel = max_abs(&(&a - &b)) / max_abs(&a).max(1e-300);
                worst = worst.max(rel);
                cases += 1;
            }
        }
    }
    Outcome::check(worst <= 1e-8, format!("max relative difference {worst:.2e} over {cases} fits (tol 1e-8)"))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut literal: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = rng_for(seed, 4);
        let n = 15;
        let x = normals(&mut rng, n, 2) * 2.0;
        let s = normals(&mut rng, n, 1);
        let k = rbf(x.view(), x.view(), 0.7);
        let m = double_center(&rbf(s.view(), s.view(), 1.0));
        let delta = 10f64.powf(rng.gen_range(-2.0..1.0));
        let forms: Vec<Array2<f64>> = [PriorForm::Correction, PriorForm::InversePrecision, PriorForm::Resolvent]
            .iter()
            .map(|&f| fair_prior_gram_dense(&k, &m, delta, f).unwrap())
            .collect();
        for i in 0..3 {
            for j in 0..i {
                worst = worst.max(frob(&(&forms[i] - &forms[j])) / frob(&forms[j]));
            }
        }
        // K - K(KM + δ⁻¹I)⁻¹MK, the operator order as literally printed
        let mut a = k.dot(&m);
        a.diag_mut().mapv_inplace(|v| v + 1.0 / delta);
        let lit = &k - &k.dot(&a.inv().unwrap()).dot(&m).dot(&k);
        literal = literal.max(frob(&(&lit - &forms[1])) / frob(&forms[1]));
    }
    Outcome::check(
        worst <= 1e-6,
        format!("max pairwise relative Frobenius difference {worst:.2e} (tol 1e-6); literal operator order differs by up to {literal:.2e} (informational)"),
    )
}

// ---------------------------------------------------------------- 5

fn categorical_problem(n: usize, seed: u64) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let mut rng = rng_for(seed, 5);
    let mut x = normals(&mut rng, n, 3);
    let mut onehot = Array2::<f64>::zeros((n, 3));
    for i in 0..n {
        let c = rng.gen_range(0..3);
        onehot[[i, c]] = 1.0;
        x[[i, 0]] += c as f64;
    }
    let y = Array1::from_shape_fn(n, |i| {
        let e: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] - 0.5 * x[[i, 2]] + 0.1 * e
    });
    (x, y, onehot)
}

/// `(1/n) Aᵀ H B`
fn cross_cov(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows() as f64;
    let am = a.mean_axis(Axis(0)).unwrap();
    let bm = b.mean_axis(Axis(0)).unwrap();
    let mut out = Array2::zeros((a.ncols(), b.ncols()));
    for i in 0..a.nrows() {
        for p in 0..a.ncols() {
            for q in 0..b.ncols() {
                out[[p, q]] += (a[[i, p]] - am[p]) * (b[[i, q]] - bm[q]) / n;
            }
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let (lambda, eta, eps) = (0.01, 3.0, 1e-3);
    let (mut primal_worst, mut gd_worst) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let n = 18 + seed as usize;
        let (x, y, s) = categorical_problem(n, seed);
        let yc = centered(&y);
        let nf = n as f64;
        let sxs = cross_cov(&x, &s);
        let mut sss = cross_cov(&s, &s);
        sss.diag_mut().mapv_inplace(|v| v + eps);
        let p = sxs.dot(&sss.inv().unwrap()).dot(&sxs.t());

        let mut a = x.t().dot(&x) + &p * (nf * eta);
        a.diag_mut().mapv_inplace(|v| v + nf * lambda);
        let beta = a.solve(&x.t().dot(&yc)).unwrap();

        // descent on (1/n)‖Xβ - y‖² + λ‖β‖² + ηβᵀPβ
        let mut hess = (x.t().dot(&x) / nf + &p * eta) * 2.0;
        hess.diag_mut().mapv_inplace(|v| v + 2.0 * lambda);
        let big = largest_eig(&hess);
        let q = (2.0 * lambda / big).sqrt();
        let momentum = (1.0 - q) / (1.0 + q);
        let lin = x.t().dot(&yc) * (2.0 / nf);
        let (mut b, mut z) = (Array1::zeros(3), Array1::zeros(3));
        for _ in 0..200_000 {
            let g = hess.dot(&z) - &lin;
            if max_abs(&g) < 1e-14 {
                break;
            }
            let next = &z - &(g / big);
            z = &next + &((&next - &b) * momentum);
            b = next;
        }

        let mut cfg = NfklConfig::new(lambda, eta, KernelSpec::Linear, KernelSpec::Linear);
        cfg.eps = eps;
        let model = fit_nfkl(x.view(), y.view(), s.view(), &cfg).unwrap();
        let dual_pred = predict_nfkl(&model, x.view()).unwrap() - model.y_mean;
        let dual_beta = x.t().dot(&model.alpha);
        primal_worst = primal_worst.max(max_abs(&(&dual_pred - &x.dot(&beta))));
        gd_worst = gd_worst.max(max_abs(&(&dual_beta - &z)));
    }
    Outcome::check(
        primal_worst <= 1e-6 && gd_worst <= 1e-5,
        format!("dual vs primal predictions {primal_worst:.2e} (tol 1e-6), dual vs descent coefficients {gd_worst:.2e} (tol 1e-5), 20 instances"),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut worst = [0.0f64; 3];
    for seed in 0..5 {
        let ds = gen_toy1(&Toy1Config { n: 40, seed, ..Default::default() }).unwrap();
        let xs = gen_toy1(&Toy1Config { n: 10, seed: seed + 100, ..Default::default() }).unwrap().x;
        let (theta, lambda) = (1.5, 0.3);
        let n = ds.n();
        let kx = KernelSpec::rbf(theta);
        let ks = KernelSpec::rbf(1.0);
        let k = rbf(ds.x.view(), ds.x.view(), theta);
        let kst = rbf(xs.view(), ds.x.view(), theta);
        let ybar = ds.y.mean().unwrap();
        let yc = centered(&ds.y);
        let mut a = k.clone();
        a.diag_mut().mapv_inplace(|v| v + lambda);
        let krr = kst.dot(&a.solve(&yc).unwrap()) + ybar;

        let fkl = fit_fkl(ds.x.view(), ds.y.view(), ds.s.view(), &FairKrrConfig::new(lambda, 0.0, kx.clone(), ks.clone())).unwrap();
        worst[0] = worst[0].max(max_abs(&(predict_fkl(&fkl, xs.view()).unwrap() - &krr)));
        let nf = fit_nfkl(ds.x.view(), ds.y.view(), ds.s.view(), &NfklConfig::from_scaled_lambda(lambda, n, 0.0, kx.clone(), ks.clone())).unwrap();
        worst[1] = worst[1].max(max_abs(&(predict_nfkl(&nf, xs.view()).unwrap() - &krr)));
        // noise λ gives the same linear system as the ridge above
        let gp = gp_fit(ds.x.view(), ds.y.view(), ds.s.view(), &FairGpConfig::new(kx, ks, lambda, 0.0)).unwrap();
        let (mean, _) = posterior_predict(&gp, xs.view()).unwrap();
        worst[2] = worst[2].max(max_abs(&(mean - &krr)));
    }
    Outcome::check(
        worst.iter().all(|&w| w <= 1e-10),
        format!("FKL {:.2e}, NFKL {:.2e}, fair GP {:.2e} from the plain solutions (tol 1e-10)", worst[0], worst[1], worst[2]),
    )
}

// ---------------------------------------------------------------- 7, 8, 11

fn grid_spec(method: Method, eta_grid: Vec<f64>, split: Split, seed: u64) -> SweepSpec {
    SweepSpec {
        method,
        eta_grid,
        theta_grid: ThetaGrid::Values(log_grid(1e-4, 1e3, 10)),
        lambda_grid: log_grid(1e-4, 1e4, 10),
        trials: 5,
        seed,
        split,
        theta_l: None,
        preprocess: Preprocess::None,
        folds: 5,
        eps: 1e-6,
        gp: GpSweepSettings::default(),
    }
}

struct Run {
    config: PathBuf,
    outputs: Vec<(PathBuf, Vec<u8>)>,
}

fn run_config(dir: &Path, name: &str, sweep: SweepSpec, data: DataSource) -> (Vec<SweepRecord>, Run) {
    let output = dir.join(name);
    let cfg = RunConfig { sweep, data, output: output.clone(), format: OutputFormat::Both, wall_time: false };
    let config = dir.join(format!("{name}.config.json"));
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let doc = cmd_tradeoff(&TradeoffArgs { config: config.clone() }).unwrap_or_else(|e| panic!("{name}: {e:?}"));
    let outputs = ["json", "csv"]
        .iter()
        .map(|ext| {
            let p = PathBuf::from(format!("{}.{ext}", output.display()));
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    (doc.records, Run { config, outputs })
}

fn per_trial(records: &[SweepRecord], trial: usize) -> Vec<&SweepRecord> {
    let mut v: Vec<&SweepRecord> = records.iter().filter(|r| r.trial == trial).collect();
    v.sort_by(|a, b| a.eta.total_cmp(&b.eta));
    v
}

fn criterion_7(dir: &Path, runs: &mut Vec<Run>) -> Outcome {
    let mut eta = vec![0.0];
    eta.extend(log_grid(1e-7, 1e3, 25));
    let split = Split { train: 700, test: 700 };
    let data = DataSource::Toy2(Toy2Config::default());
    let (fkl, run) = run_config(dir, "toy2_fkl", grid_spec(Method::Fkl, eta.clone(), split, 1), data.clone());
    runs.push(run);
    let (nfkl, run) = run_config(dir, "toy2_nfkl", grid_spec(Method::Nfkl, eta, split, 1), data);
    runs.push(run);

    let mut violations = Vec::new();
    for (name, recs) in [("fkl", &fkl), ("nfkl", &nfkl)] {
        for t in 0..5 {
            let rows = per_trial(recs, t);
            let slack = 0.01 * rows[0].hsic;
            let bad = rows.windows(2).filter(|w| w[1].hsic > w[0].hsic + slack).count();
            if bad > 0 {
                violations.push(format!("{name} trial {t}: {bad} rises"));
            }
        }
    }
    let mut wins = 0;
    let mut areas = Vec::new();
    for t in 0..5 {
        let pts = |recs: &[SweepRecord]| per_trial(recs, t).iter().map(|r| (r.hsic, r.rmse)).collect::<Vec<_>>();
        let (a, b) = (pts(&fkl), pts(&nfkl));
        let range = |p: &[(f64, f64)]| p.iter().fold((f64::MAX, f64::MIN), |(lo, hi), q| (lo.min(q.0), hi.max(q.0)));
        let ((alo, ahi), (blo, bhi)) = (range(&a), range(&b));
        let (lo, hi) = (alo.max(blo), ahi.min(bhi));
        let (fa, na) = if hi > lo { (tradeoff_area(&a, lo, hi), tradeoff_area(&b, lo, hi)) } else { (0.0, 0.0) };
        if hi > lo && na <= fa {
            wins += 1;
        }
        areas.push(format!("{na:.3e}/{fa:.3e}"));
    }
    let monotone = violations.is_empty();
    Outcome::check(
        monotone && wins >= 4,
        format!(
            "(a) HSIC non-increasing within 1% of the eta=0 value: {} ; (b) NFKL area <= FKL area in {wins}/5 trials (need 4) [nfkl/fkl: {}]",
            if monotone { "all 10 curves".to_string() } else { violations.join(", ") },
            areas.join(" ")
        ),
    )
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn at_eta(records: &[SweepRecord], eta: f64) -> Vec<&SweepRecord> {
    let mut v: Vec<&SweepRecord> = records.iter().filter(|r| r.eta == eta).collect();
    v.sort_by_key(|r| r.trial);
    v
}

fn criterion_8(dir: &Path, runs: &mut Vec<Run>) -> Outcome {
    let split = Split { train: 500, test: 500 };
    let data = DataSource::Toy1(Toy1Config::default());
    let mut go = |name: &str, spec: SweepSpec| {
        let (r, run) = run_config(dir, name, spec, data.clone());
        runs.push(run);
        r
    };
    let krr = go("toy1_krr", grid_spec(Method::Krr, vec![0.0], split, 2));
    let fkl = go("toy1_fkl", grid_spec(Method::Fkl, vec![2e-3, 0.2, 20.0, 200.0], split, 2));
    let mut spec = grid_spec(Method::Krr, vec![0.0], split, 2);
    spec.preprocess = Preprocess::Osv;
    let osv = go("toy1_osv", spec.clone());
    spec.preprocess = Preprocess::Frl;
    let frl = go("toy1_frl", spec);
    let mut gp = grid_spec(Method::FairGp, vec![0.0, 20.0, 200.0], split, 2);
    gp.theta_grid = ThetaGrid::Values(vec![1.0]);
    gp.lambda_grid = vec![0.1];
    let gp = go("toy1_fair_gp", gp);

    let r2 = |recs: &[SweepRecord], eta: f64| mean(at_eta(recs, eta).iter().map(|r| r.r2_obs));
    let corr = |recs: &[SweepRecord], eta: f64| mean(at_eta(recs, eta).iter().map(|r| r.corr_sensitive));
    let (r_std, r_200, r_osv, r_frl) = (r2(&krr, 0.0), r2(&fkl, 200.0), r2(&osv, 0.0), r2(&frl, 0.0));
    let i = r_std > r_200 && r_200 > r_osv && r_osv > r_frl && r_frl.abs() < 0.05;
    let (c_std, c_gp, c_frl) = (corr(&krr, 0.0), corr(&gp, 200.0), corr(&frl, 0.0));
    let ii = c_std.abs() >= 3.0 * c_gp.abs() && c_frl.abs() < 0.05;
    let better = at_eta(&fkl, 20.0)
        .iter()
        .zip(at_eta(&krr, 0.0))
        .filter(|(a, b)| a.r2_true.unwrap() > b.r2_true.unwrap())
        .count();
    let iii = better >= 3;
    let gp_r2: Vec<String> = [0.0, 20.0, 200.0].iter().map(|&e| format!("{:.3}", r2(&gp, e))).collect();
    Outcome::check(
        i && ii && iii,
        format!(
            "(i) R2_obs standard {r_std:.3} > eta=200 {r_200:.3} > OSV {r_osv:.3} > FRL {r_frl:.3}: {} ; (ii) corr standard {c_std:.4}, GP eta=200 {c_gp:.4}, FRL {c_frl:.4}: {} ; (iii) R2_true(eta=20) > standard in {better}/5: {} ; GP R2_obs at eta 0/20/200 {}",
            ok(i),
            ok(ii),
            ok(iii),
            gp_r2.join("/")
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "not met"
    }
}

fn criterion_11(runs: &[Run]) -> Outcome {
    if runs.is_empty() {
        return Outcome::skip("no result files from criteria 7-8");
    }
    let mut differing = Vec::new();
    let mut files = 0;
    for run in runs {
        cmd_tradeoff(&TradeoffArgs { config: run.config.clone() }).unwrap();
        for (path, first) in &run.outputs {
            files += 1;
            if &std::fs::read(path).unwrap() != first {
                differing.push(path.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
    }
    Outcome::check(differing.is_empty(), format!("{files} result files rerun, differing: {differing:?}"))
}

// ---------------------------------------------------------------- 9

fn set_log_param(cfg: &mut FairGpConfig, name: &str, v: f64, n: usize) {
    let value = v.exp();
    match name {
        "theta_l" => cfg.kernel_s = KernelSpec::rbf(value),
        "noise" => cfg.noise = value,
        "delta" => cfg.delta = value,
        other => {
            let idx: usize = other.trim_start_matches("theta_x[").trim_end_matches(']').parse().unwrap();
            match &mut cfg.kernel_x {
                KernelSpec::Rbf { lengthscale } => *lengthscale = value,
                KernelSpec::ArdRbf { lengthscales } => lengthscales[idx] = value,
                KernelSpec::Linear => unreachable!(),
            }
        }
    }
    if let Some(eta) = cfg.optimizer.tie_eta {
        cfg.delta = FairGpConfig::delta_for_eta(eta, cfg.noise, n);
    }
}

fn log_value(cfg: &FairGpConfig, name: &str) -> f64 {
    let v = match (name, &cfg.kernel_x, &cfg.kernel_s) {
        ("theta_l", _, KernelSpec::Rbf { lengthscale }) => *lengthscale,
        ("noise", _, _) => cfg.noise,
        ("delta", _, _) => cfg.delta,
        (_, KernelSpec::Rbf { lengthscale }, _) => *lengthscale,
        (other, KernelSpec::ArdRbf { lengthscales }, _) => {
            lengthscales[other.trim_start_matches("theta_x[").trim_end_matches(']').parse::<usize>().unwrap()]
        }
        _ => unreachable!(),
    };
    v.ln()
}

/// Worst relative disagreement between analytic and central-difference
/// gradients, skipping coordinates where both are below `flat`.
fn gradient_check(x: ArrayView2<f64>, y: &Array1<f64>, s: ArrayView2<f64>, cfg: &FairGpConfig, flat: f64) -> (f64, usize) {
    let n = y.len();
    let (_, grad) = nlml_gradient(x, y.view(), s, cfg).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (name, g) in grad {
        let at = log_value(cfg, &name);
        let eval = |v: f64| {
            let mut c = cfg.clone();
            set_log_param(&mut c, &name, v, n);
            gp_fit(x, y.view(), s, &c).unwrap().nlml
        };
        let fd = (eval(at + h) - eval(at - h)) / (2.0 * h);
        let scale = g.abs().max(fd.abs());
        if scale < flat {
            continue;
        }
        checked += 1;
        worst = worst.max((g - fd).abs() / scale);
    }
    (worst, checked)
}

fn criterion_9() -> Outcome {
    let mut worst_opt: f64 = 0.0;
    let mut worst_start: f64 = 0.0;
    let mut checked = 0;
    let mut start_violations = 0;
    let mut restarts = 0;
    for (case, seed) in [(0usize, 21u64), (1, 22), (2, 23)] {
        let ds = gen_toy1(&Toy1Config { n: 120, seed, ..Default::default() }).unwrap();
        let med = median_heuristic(ds.x.view()).unwrap();
        let mut cfg = match case {
            0 => FairGpConfig::new(KernelSpec::rbf(med), KernelSpec::rbf(1.0), 0.1, 0.0),
            1 => FairGpConfig::new(KernelSpec::ard(vec![med; ds.x.ncols()]), KernelSpec::rbf(1.0), 0.1, 0.0),
            _ => FairGpConfig::new(KernelSpec::ard(vec![med; ds.x.ncols()]), KernelSpec::rbf(1.0), 0.1, 0.0),
        };
        cfg.optimizer = OptimizerSettings { restarts: 3, seed, ..OptimizerSettings::default() };
        if case == 2 {
            cfg.optimizer.tie_eta = Some(5.0);
            cfg.delta = FairGpConfig::delta_for_eta(5.0, cfg.noise, ds.n());
        }
        let report = optimize_hyperparams(ds.x.view(), ds.y.view(), ds.s.view(), &cfg).unwrap();
        for r in &report.restarts {
            restarts += 1;
            if let Some(start) = r.start_nlml {
                if report.nlml > start {
                    start_violations += 1;
                }
            }
        }
        let (w, c) = gradient_check(ds.x.view(), &ds.y, ds.s.view(), &report.config, 1e-4);
        worst_opt = worst_opt.max(w);
        checked += c;
        let (w, _) = gradient_check(ds.x.view(), &ds.y, ds.s.view(), &cfg, 1e-4);
        worst_start = worst_start.max(w);
    }
    Outcome::check(
        start_violations == 0 && worst_opt < 1e-2 && worst_start < 1e-2,
        format!(
            "optimum above a start point in {start_violations}/{restarts} restarts; gradient vs finite difference at optima {worst_opt:.2e} over {checked} non-flat coordinates, at initial points {worst_start:.2e} (tol 1e-2)"
        ),
    )
}

// ---------------------------------------------------------------- 10

const CRIME_SENSITIVE: [&str; 10] = [
    "racepctblack",
    "racePctWhite",
    "racePctAsian",
    "racePctHisp",
    "whitePerCap",
    "blackPerCap",
    "indianPerCap",
    "AsianPerCap",
    "OtherPerCap",
    "HispPerCap",
];

fn criterion_10() -> Outcome {
    let Some(path) = std::env::var_os("FAIRKERN_CRIME_DATA") else {
        return Outcome::skip("set FAIRKERN_CRIME_DATA to the communities-and-crime data file to run");
    };
    let recipe = Path::new(env!("CARGO_MANIFEST_DIR")).join("recipes/crime.json");
    let spec: CsvSpec = serde_json::from_str(&std::fs::read_to_string(recipe).unwrap()).unwrap();
    let (raw, _) = load_csv(Path::new(&path), &spec).unwrap();
    let (ds, _) = standardize(&raw).unwrap();
    let n_train = ds.n() / 2;
    let (train, test) = train_test_split(&ds, n_train, ds.n() - n_train, 10).unwrap();
    let ks = KernelSpec::rbf(median_heuristic(train.s.view()).unwrap());
    let med = median_heuristic(train.x.view()).unwrap();
    let fit = |eta: Option<f64>| {
        let mut cfg = FairGpConfig::new(KernelSpec::ard(vec![med; train.x.ncols()]), ks.clone(), 0.1, 0.0);
        cfg.optimizer = OptimizerSettings { restarts: 1, max_iters: 100, seed: 10, tie_eta: eta, ..OptimizerSettings::default() };
        let best = optimize_hyperparams(train.x.view(), train.y.view(), train.s.view(), &cfg).unwrap();
        let model = gp_fit(train.x.view(), train.y.view(), train.s.view(), &best.config).unwrap();
        let (mean, _) = posterior_predict(&model, test.x.view()).unwrap();
        let KernelSpec::ArdRbf { lengthscales } = best.config.kernel_x else { unreachable!() };
        (rmse(mean.view(), test.y.view()).unwrap(), unfairness(mean.view(), test.s.view(), &ks).unwrap(), lengthscales)
    };
    let (r0, u0, l0) = fit(None);
    let (r1, u1, l1) = fit(Some(10.0));
    let grew = CRIME_SENSITIVE
        .iter()
        .filter(|name| {
            let i = train.feature_names.iter().position(|f| f == *name).unwrap();
            l1[i] > l0[i]
        })
        .count();
    let pass = u1 * 10.0 <= u0 && r1 <= 1.35 * r0 && grew >= 6;
    Outcome::check(
        pass,
        format!("unfairness {u0:.4} -> {u1:.4}, test RMSE {r0:.3} -> {r1:.3}, sensitive lengthscales increased {grew}/10"),
    )
}

// ----------------------------------------------------------------

fn report(id: usize, budget_s: Option<f64>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let secs = start.elapsed().as_secs_f64();
    let in_budget = budget_s.map_or(true, |b| secs <= b);
    let status = match out.pass {
        None => "SKIP",
        Some(true) if in_budget => "PASS",
        Some(_) => "FAIL",
    };
    let budget = budget_s.map(|b| format!(", budget {b:.0} s")).unwrap_or_default();
    println!("criterion {id:>2}: {status}  {}  ({secs:.1} s{budget})", out.detail);
    status != "FAIL"
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    let mut all = true;
    all &= report(1, Some(5.0), criterion_1);
    all &= report(2, Some(60.0), criterion_2);
    all &= report(3, Some(60.0), criterion_3);
    all &= report(4, Some(10.0), criterion_4);
    all &= report(5, Some(60.0), criterion_5);
    all &= report(6, Some(5.0), criterion_6);
    all &= report(7, Some(900.0), || criterion_7(dir.path(), &mut runs));
    all &= report(8, Some(600.0), || criterion_8(dir.path(), &mut runs));
    all &= report(9, Some(120.0), criterion_9);
    all &= report(10, Some(1800.0), criterion_10);
    all &= report(11, None, || criterion_11(&runs));
    if !all {
        std::process::exit(1);
    }
}
