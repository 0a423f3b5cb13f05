//! Command-line surface of the `fairkern` binary.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datasets::{gen_toy1, gen_toy2, load_csv, write_csv, CsvSpec, Dataset, Toy1Config, Toy2Config};
use crate::error::FairError;
use crate::experiments::{
    cv_select, log_grid, run_sweep_with_progress, CellError, CvSettings, DataSource, Method, SweepRecord, SweepSpec,
};
use crate::fair_gp::{
    ard_relevance_report, gp_fit, optimize_hyperparams, posterior_predict, unfairness, FairGpConfig, FairGpModel,
    HyperName, OptimizerSettings,
};
use crate::fair_krr::{fit_fkl, predict_fkl, FairKrrConfig};
use crate::kernels::{gram_self, median_heuristic, KernelSpec};
use crate::metrics::{r_squared, rmse, DependenceAuditor, DEFAULT_MI_BINS};
use crate::nfkl::{fit_nfkl, predict_nfkl, NfklConfig, DEFAULT_EPS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<FairError> for CliError {
    fn from(e: FairError) -> Self {
        match e {
            FairError::InvalidParameter(_)
            | FairError::Config(_)
            | FairError::DimensionMismatch { .. }
            | FairError::Data(_)
            | FairError::Csv(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fairkern", version, about = "Fair kernel regression and fair Gaussian processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Fit one model and report its metrics.
    Fit(FitArgs),
    /// Run an η sweep described by a JSON config.
    Tradeoff(TradeoffArgs),
    /// Compare ARD lengthscales of a plain and a fair GP.
    ArdReport(ArdArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Toy1,
    Toy2,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    pub generator: Generator,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Group bias (toy1).
    #[arg(long)]
    pub b: Option<f64>,
    /// Observation noise stddev (toy1).
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub sigma_x: Option<f64>,
    #[arg(long)]
    pub sigma_s: Option<f64>,
    #[arg(long)]
    pub sigma_y: Option<f64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Krr,
    Fkl,
    Nfkl,
    Gp,
    #[value(name = "fair_gp")]
    FairGp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Krr => Method::Krr,
            MethodArg::Fkl => Method::Fkl,
            MethodArg::Nfkl => Method::Nfkl,
            MethodArg::Gp => Method::Gp,
            MethodArg::FairGp => Method::FairGp,
        }
    }
}

/// Column selection shared by the data-reading commands.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Sensitive column (repeatable).
    #[arg(long = "sensitive", required = true)]
    pub sensitive: Vec<String>,
    /// Column removed from the inputs (repeatable).
    #[arg(long = "drop")]
    pub drop: Vec<String>,
    /// Noiseless-target column; `f_true` is used when present.
    #[arg(long)]
    pub truth: Option<String>,
    /// Held-out file with the same columns.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// Input RBF lengthscale; median heuristic when absent.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Ridge weight λ in `K + λI` form (ERM methods).
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// Sensitive RBF lengthscale; median heuristic when absent.
    #[arg(long)]
    pub theta_l: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    /// GP noise variance (start value with --optimize).
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// GP prior fairness strength; derived from η as η/(noise·n) when absent.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Select θ and λ by k-fold CV (ERM methods).
    #[arg(long)]
    pub cv: bool,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Maximize the marginal likelihood (GP methods).
    #[arg(long)]
    pub optimize: bool,
    /// Per-dimension lengthscales (GP methods).
    #[arg(long)]
    pub ard: bool,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Result file; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TradeoffArgs {
    pub config: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelArg {
    Ard,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct ArdArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fairness weight of the fair run; δ follows the noise as η/(noise·n).
    #[arg(long)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub theta_l: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Ard)]
    pub kernel: KernelArg,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

/// Config file of the `tradeoff` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sweep: SweepSpec,
    pub data: DataSource,
    /// Output path without extension; `.json` and `.csv` are appended.
    pub output: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    /// Record elapsed seconds in the metadata (makes files differ run to run).
    #[serde(default)]
    pub wall_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Effective configuration after defaults.
    pub config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument<R> {
    pub meta: Meta,
    pub records: Vec<R>,
    pub errors: Vec<CellError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub split: String,
    #[serde(flatten)]
    pub record: SweepRecord,
}

fn meta(command: &str, seed: u64, config: Value) -> Meta {
    Meta { command: command.into(), version: env!("CARGO_PKG_VERSION").into(), seed, config, wall_time_s: None, fit: None }
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_text(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn json_text<T: Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Record table with one row per record and 17 significant digits.
pub fn records_csv(records: &[SweepRecord]) -> String {
    let num = |v: f64| format!("{v:.16e}");
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let mut out = String::from("trial,eta,rmse,r2_obs,r2_true,hsic,nocco,mi,corr_sensitive,theta,lambda,nlml,delta\n");
    for r in records {
        let cells = [
            r.trial.to_string(),
            num(r.eta),
            num(r.rmse),
            num(r.r2_obs),
            opt(r.r2_true),
            num(r.hsic),
            num(r.nocco),
            num(r.mi),
            num(r.corr_sensitive),
            num(r.theta),
            num(r.lambda),
            opt(r.nlml),
            opt(r.delta),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let ds = match args.generator {
        Generator::Toy1 => {
            let d = Toy1Config::default();
            gen_toy1(&Toy1Config {
                n: args.n.unwrap_or(d.n),
                b: args.b.unwrap_or(d.b),
                noise_sd: args.noise_sd.unwrap_or(d.noise_sd),
                seed: args.seed,
            })?
        }
        Generator::Toy2 => {
            let d = Toy2Config::default();
            gen_toy2(&Toy2Config {
                n: args.n.unwrap_or(d.n),
                sigma_x: args.sigma_x.unwrap_or(d.sigma_x),
                sigma_s: args.sigma_s.unwrap_or(d.sigma_s),
                sigma_y: args.sigma_y.unwrap_or(d.sigma_y),
                seed: args.seed,
            })?
        }
    };
    write_csv(&ds, &args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let extra = ds.sensitive_in_x().iter().filter(|p| p.is_none()).count();
    let cols = ds.x.ncols() + extra + 1 + usize::from(ds.f_true.is_some());
    println!("wrote {} rows x {} columns to {}", ds.n(), cols, args.out.display());
    Ok(())
}

fn csv_has_column(path: &Path, name: &str) -> CliResult<bool> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(headers.iter().any(|h| h.trim() == name))
}

fn read_data(args: &DataArgs) -> CliResult<(Dataset, Option<Dataset>)> {
    let truth = match &args.truth {
        Some(t) => Some(t.clone()),
        None => csv_has_column(&args.data, "f_true")?.then(|| "f_true".to_string()),
    };
    let spec = CsvSpec {
        target: args.target.clone(),
        sensitive: args.sensitive.clone(),
        drop: args.drop.clone(),
        truth,
        header: None,
    };
    let (train, report) = load_csv(&args.data, &spec)?;
    if report.rows_dropped > 0 {
        eprintln!("dropped {} of {} rows with missing values", report.rows_dropped, report.rows_read);
    }
    let test = match &args.test {
        Some(p) => Some(load_csv(p, &spec)?.0),
        None => None,
    };
    if let Some(t) = &test {
        if t.feature_names != train.feature_names {
            return Err(CliError::Usage("test file columns differ from training columns".into()));
        }
    }
    Ok((train, test))
}

fn evaluate(ds: &Dataset, pred: &Array1<f64>, kernel_s: &KernelSpec, eps: f64, eta: f64, theta: f64, lambda: f64) -> CliResult<SweepRecord> {
    let l = gram_self(kernel_s, ds.s.view())?.values;
    let dep = DependenceAuditor::new(&l, ds.s.view(), eps, DEFAULT_MI_BINS)?.report(pred.view())?;
    Ok(SweepRecord {
        trial: 0,
        eta,
        rmse: rmse(pred.view(), ds.y.view())?,
        r2_obs: r_squared(pred.view(), ds.y.view())?,
        r2_true: ds.f_true.as_ref().map(|f| r_squared(pred.view(), f.view())).transpose()?,
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

fn summarize(v: &Array1<f64>) -> Value {
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    serde_json::json!({ "min": min, "mean": v.mean().unwrap_or(f64::NAN), "max": max })
}

fn gp_lengthscale_summary(k: &KernelSpec) -> f64 {
    match k {
        KernelSpec::Rbf { lengthscale } => *lengthscale,
        KernelSpec::ArdRbf { lengthscales } => (lengthscales.iter().map(|l| l.ln()).sum::<f64>() / lengthscales.len() as f64).exp(),
        KernelSpec::Linear => f64::NAN,
    }
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let (train, test) = read_data(&args.data)?;
    let method = Method::from(args.method);
    let n = train.n();
    let theta_l = match args.theta_l {
        Some(t) => t,
        None => median_heuristic(train.s.view())?,
    };
    let kernel_s = KernelSpec::rbf(theta_l);
    let mut fit_meta = serde_json::Map::new();
    fit_meta.insert("theta_l".into(), theta_l.into());

    let mut records = Vec::new();
    if method.is_gp() {
        if args.cv {
            return Err(CliError::Usage("--cv applies to krr, fkl and nfkl".into()));
        }
        let med = median_heuristic(train.x.view())?;
        let t0 = args.theta.unwrap_or(med);
        let kernel_x = if args.ard { KernelSpec::ard(vec![t0; train.x.ncols()]) } else { KernelSpec::rbf(t0) };
        let eta = if method == Method::Gp { 0.0 } else { args.eta };
        let delta = match (method, args.delta) {
            (Method::Gp, _) => 0.0,
            (_, Some(d)) => d,
            (_, None) => FairGpConfig::delta_for_eta(eta, args.noise, n),
        };
        let mut cfg = FairGpConfig::new(kernel_x, kernel_s.clone(), args.noise, delta);
        if args.optimize {
            cfg.optimizer = OptimizerSettings {
                restarts: args.restarts,
                max_iters: args.max_iters,
                seed: args.seed,
                fixed_params: vec![HyperName::ThetaL, HyperName::Delta],
                tie_eta: (method == Method::FairGp && args.delta.is_none() && eta > 0.0).then_some(eta),
                ..OptimizerSettings::default()
            };
            cfg = optimize_hyperparams(train.x.view(), train.y.view(), train.s.view(), &cfg)?.config;
        }
        let model = gp_fit(train.x.view(), train.y.view(), train.s.view(), &cfg)?;
        let theta = gp_lengthscale_summary(&cfg.kernel_x);
        let mut push = |split: &str, ds: &Dataset| -> CliResult<Array1<f64>> {
            let (mean, var) = posterior_predict(&model, ds.x.view())?;
            let mut rec = evaluate(ds, &mean, &kernel_s, args.eps, eta, theta, cfg.noise)?;
            rec.nlml = Some(model.nlml);
            rec.delta = Some(cfg.delta);
            records.push(FitRecord { split: split.into(), record: rec });
            Ok(var)
        };
        let mut var = push("train", &train)?;
        if let Some(t) = &test {
            var = push("test", t)?;
        }
        fit_meta.insert("kernel_x".into(), to_value(&cfg.kernel_x)?);
        fit_meta.insert("noise".into(), cfg.noise.into());
        fit_meta.insert("delta".into(), cfg.delta.into());
        fit_meta.insert("nlml".into(), model.nlml.into());
        fit_meta.insert("predictive_variance".into(), summarize(&var));
    } else {
        if args.optimize || args.ard {
            return Err(CliError::Usage("--optimize and --ard apply to gp and fair_gp".into()));
        }
        let eta = if method == Method::Krr { 0.0 } else { args.eta };
        let (theta, lambda) = if args.cv {
            let thetas = log_grid(1e-4, 1e3, 10);
            let lambdas = log_grid(1e-4, 1e4, 10);
            let st = CvSettings { folds: args.folds, seed: args.seed, kernel_s: kernel_s.clone(), eps: args.eps };
            let c = cv_select(&train, method, eta, &thetas, &lambdas, &st)?;
            fit_meta.insert("cv_rmse".into(), c.cv_rmse.into());
            (c.theta, c.lambda)
        } else {
            (args.theta.map_or_else(|| median_heuristic(train.x.view()), Ok)?, args.lambda)
        };
        let kx = KernelSpec::rbf(theta);
        let predict: Box<dyn Fn(&Dataset) -> CliResult<Array1<f64>>> = if method == Method::Nfkl {
            let mut cfg = NfklConfig::from_scaled_lambda(lambda, n, eta, kx, kernel_s.clone());
            cfg.eps = args.eps;
            let model = fit_nfkl(train.x.view(), train.y.view(), train.s.view(), &cfg)?;
            Box::new(move |d: &Dataset| Ok(predict_nfkl(&model, d.x.view())?))
        } else {
            let cfg = FairKrrConfig::new(lambda, eta, kx, kernel_s.clone());
            let model = fit_fkl(train.x.view(), train.y.view(), train.s.view(), &cfg)?;
            Box::new(move |d: &Dataset| Ok(predict_fkl(&model, d.x.view())?))
        };
        records.push(FitRecord { split: "train".into(), record: evaluate(&train, &predict(&train)?, &kernel_s, args.eps, eta, theta, lambda)? });
        if let Some(t) = &test {
            records.push(FitRecord { split: "test".into(), record: evaluate(t, &predict(t)?, &kernel_s, args.eps, eta, theta, lambda)? });
        }
    }
    let mut m = meta("fit", args.seed, to_value(args)?);
    m.fit = Some(Value::Object(fit_meta));
    let doc = ResultDocument { meta: m, records, errors: Vec::new() };
    write_text(args.out.as_deref(), &json_text(&doc)?)
}

/// Reads and validates a `tradeoff` config.
pub fn read_run_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    cfg.sweep.validate()?;
    Ok(cfg)
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Runs a sweep config and writes its result files; returns the document.
pub fn cmd_tradeoff(args: &TradeoffArgs) -> CliResult<ResultDocument<SweepRecord>> {
    let cfg = read_run_config(&args.config)?;
    let start = Instant::now();
    let curve = run_sweep_with_progress(&cfg.sweep, &cfg.data, |msg| eprintln!("{msg}"))?;
    let mut m = meta("tradeoff", cfg.sweep.seed, to_value(&cfg)?);
    if cfg.wall_time {
        m.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    let doc = ResultDocument { meta: m, records: curve.records, errors: curve.errors };
    if matches!(cfg.format, OutputFormat::Json | OutputFormat::Both) {
        std::fs::write(with_ext(&cfg.output, "json"), json_text(&doc)?)?;
    }
    if matches!(cfg.format, OutputFormat::Csv | OutputFormat::Both) {
        std::fs::write(with_ext(&cfg.output, "csv"), records_csv(&doc.records))?;
    }
    for e in &doc.errors {
        eprintln!("cell error (trial {}, eta {:?}): {}", e.trial, e.eta, e.message);
    }
    if doc.records.is_empty() {
        return Err(CliError::Runtime("no sweep cell succeeded".into()));
    }
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArdRow {
    pub feature: String,
    pub plain: f64,
    pub fair: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArdReport {
    pub meta: Meta,
    pub features: Vec<ArdRow>,
    pub rmse: [f64; 2],
    pub unfairness: [f64; 2],
    /// Whether the metrics come from the held-out file.
    pub held_out: bool,
}

impl ArdReport {
    /// Two-column lengthscale table followed by RMSE and Unfairness rows.
    pub fn to_table(&self) -> String {
        let width = self.features.iter().map(|r| r.feature.len()).max().unwrap_or(0).max(10);
        let mut out = format!("{:<width$}  {:>12}  {:>12}\n", "feature", "plain", "fair");
        for r in &self.features {
            out.push_str(&format!("{:<width$}  {:>12.4}  {:>12.4}\n", r.feature, r.plain, r.fair));
        }
        out.push_str(&format!("{:<width$}  {:>12.4}  {:>12.4}\n", "RMSE", self.rmse[0], self.rmse[1]));
        out.push_str(&format!("{:<width$}  {:>12.4}  {:>12.4}\n", "Unfairness", self.unfairness[0], self.unfairness[1]));
        out
    }
}

/// Fits the plain and the fair ARD GP and collects the report.
pub fn ard_report(args: &ArdArgs) -> CliResult<ArdReport> {
    if args.kernel != KernelArg::Ard {
        return Err(CliError::Usage("ard-report needs the ard kernel".into()));
    }
    if !(args.eta >= 0.0 && args.eta.is_finite()) {
        return Err(CliError::Usage(format!("eta must be non-negative, got {}", args.eta)));
    }
    let (train, test) = read_data(&args.data)?;
    if train.x.ncols() < 2 {
        return Err(CliError::Usage("ard-report needs at least two input columns".into()));
    }
    let kernel_s = KernelSpec::rbf(args.theta_l);
    let med = median_heuristic(train.x.view())?;
    let fit = |eta: Option<f64>| -> CliResult<FairGpModel> {
        let mut cfg = FairGpConfig::new(KernelSpec::ard(vec![med; train.x.ncols()]), kernel_s.clone(), args.noise, 0.0);
        cfg.optimizer = OptimizerSettings {
            restarts: args.restarts,
            max_iters: args.max_iters,
            seed: args.seed,
            fixed_params: vec![HyperName::ThetaL, HyperName::Delta],
            tie_eta: eta,
            ..OptimizerSettings::default()
        };
        let best = optimize_hyperparams(train.x.view(), train.y.view(), train.s.view(), &cfg)?;
        Ok(gp_fit(train.x.view(), train.y.view(), train.s.view(), &best.config)?)
    };
    let plain = fit(None)?;
    let fair = fit((args.eta > 0.0).then_some(args.eta))?;
    let eval_set = test.as_ref().unwrap_or(&train);
    let score = |m: &FairGpModel| -> CliResult<(f64, f64)> {
        let (mean, _) = posterior_predict(m, eval_set.x.view())?;
        Ok((rmse(mean.view(), eval_set.y.view())?, unfairness(mean.view(), eval_set.s.view(), &kernel_s)?))
    };
    let (rp, up) = score(&plain)?;
    let (rf, uf) = score(&fair)?;
    let names = train.feature_names.clone();
    let lp = ard_relevance_report(&plain, Some(&names))?;
    let lf = ard_relevance_report(&fair, Some(&names))?;
    let features = lp
        .iter()
        .zip(lf.iter())
        .map(|(a, b)| ArdRow { feature: a.name.clone(), plain: a.lengthscale, fair: b.lengthscale })
        .collect();
    Ok(ArdReport {
        meta: meta("ard-report", args.seed, to_value(args)?),
        features,
        rmse: [rp, rf],
        unfairness: [up, uf],
        held_out: test.is_some(),
    })
}

pub fn cmd_ard_report(args: &ArdArgs) -> CliResult<()> {
    let report = ard_report(args)?;
    let text = match args.format {
        ReportFormat::Text => report.to_table(),
        ReportFormat::Json => json_text(&report)?,
    };
    write_text(args.out.as_deref(), &text)
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Tradeoff(a) => cmd_tradeoff(a).map(|_| ()),
        Command::ArdReport(a) => cmd_ard_report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
