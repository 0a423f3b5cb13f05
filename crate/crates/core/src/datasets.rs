//! Synthetic generators, fairness baselines, CSV input and resampling.
//!
//! Random streams come from ChaCha20 (`rand_chacha`), seeded with a 64-bit
//! seed and selecting a stream number; normal variates use the Ziggurat
//! sampler of `rand_distr::StandardNormal`. A dataset generated from one
//! seed is bitwise identical across runs of this crate.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FairError, Result};
use crate::linalg::PdFactor;

/// Generator for `(seed, stream)`; distinct streams are independent.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub s: Array2<f64>,
    pub feature_names: Vec<String>,
    pub sensitive_names: Vec<String>,
    pub f_true: Option<Array1<f64>>,
}

fn unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(FairError::Data(format!("duplicate {what} name '{n}'")));
        }
    }
    Ok(())
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        check_dim("dataset X rows", n, self.x.nrows())?;
        check_dim("dataset S rows", n, self.s.nrows())?;
        check_dim("feature names", self.x.ncols(), self.feature_names.len())?;
        check_dim("sensitive names", self.s.ncols(), self.sensitive_names.len())?;
        if let Some(f) = &self.f_true {
            check_dim("true function length", n, f.len())?;
        }
        unique(&self.feature_names, "feature")?;
        unique(&self.sensitive_names, "sensitive")?;
        let finite = self.x.iter().chain(self.y.iter()).chain(self.s.iter()).all(|v| v.is_finite())
            && self.f_true.as_ref().map_or(true, |f| f.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(FairError::NonFinite("dataset"));
        }
        Ok(())
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            s: self.s.select(Axis(0), idx),
            feature_names: self.feature_names.clone(),
            sensitive_names: self.sensitive_names.clone(),
            f_true: self.f_true.as_ref().map(|f| f.select(Axis(0), idx)),
        }
    }

    /// Index of each sensitive column inside X, if present.
    pub fn sensitive_in_x(&self) -> Vec<Option<usize>> {
        self.sensitive_names
            .iter()
            .map(|s| self.feature_names.iter().position(|f| f == s))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toy1Config {
    pub n: usize,
    pub b: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for Toy1Config {
    fn default() -> Self {
        Self { n: 500, b: 1.0, noise_sd: 0.5, seed: 0 }
    }
}

/// Inputs `x1, x2, z ~ N(0,1)`, sensitive `x3 = (x1 + z)/√2` with `z` unobserved,
/// true function `sign((x1 - z)·x3)·|x2|`, and observations biased by `+b`
/// when `x3 > 0` and `-b` otherwise. Draw order per row: x1, x2, z, noise.
pub fn gen_toy1(cfg: &Toy1Config) -> Result<Dataset> {
    if cfg.n < 4 {
        return Err(FairError::InvalidParameter(format!("toy1 needs n >= 4, got {}", cfg.n)));
    }
    if !(cfg.noise_sd > 0.0 && cfg.noise_sd.is_finite()) || !cfg.b.is_finite() {
        return Err(FairError::InvalidParameter("toy1 needs finite b and positive noise_sd".into()));
    }
    let mut rng = rng_for(cfg.seed, 0);
    let n = cfg.n;
    let mut x = Array2::<f64>::zeros((n, 3));
    let mut y = Array1::<f64>::zeros(n);
    let mut f = Array1::<f64>::zeros(n);
    for i in 0..n {
        let (x1, x2, z) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
        let e = normal(&mut rng);
        let x3 = (x1 + z) / std::f64::consts::SQRT_2;
        let prod = (x1 - z) * x3;
        let sign = if prod > 0.0 { 1.0 } else if prod < 0.0 { -1.0 } else { 0.0 };
        f[i] = sign * x2.abs();
        let bias = if x3 > 0.0 { cfg.b } else { -cfg.b };
        y[i] = f[i] + bias + cfg.noise_sd * e;
        x.row_mut(i).assign(&ndarray::arr1(&[x1, x2, x3]));
    }
    Ok(Dataset {
        s: x.slice(s![.., 2..3]).to_owned(),
        x,
        y,
        feature_names: vec!["x1".into(), "x2".into(), "x3".into()],
        sensitive_names: vec!["x3".into()],
        f_true: Some(f),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toy2Config {
    pub n: usize,
    pub sigma_x: f64,
    pub sigma_s: f64,
    pub sigma_y: f64,
    pub seed: u64,
}

impl Default for Toy2Config {
    fn default() -> Self {
        Self { n: 700, sigma_x: 0.5, sigma_s: 1.0, sigma_y: 0.5, seed: 0 }
    }
}

/// `s ~ N(0, σ_s²)`, `x | s ~ N(log|s|, σ_x²)`, `y = x² + s² + N(0, σ_y²)`.
/// Draw order per row: s, x, noise.
pub fn gen_toy2(cfg: &Toy2Config) -> Result<Dataset> {
    if cfg.n == 0 {
        return Err(FairError::InvalidParameter("toy2 needs n >= 1".into()));
    }
    for (name, v) in [("sigma_x", cfg.sigma_x), ("sigma_s", cfg.sigma_s), ("sigma_y", cfg.sigma_y)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(FairError::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let mut rng = rng_for(cfg.seed, 0);
    let n = cfg.n;
    let mut x = Array2::<f64>::zeros((n, 1));
    let mut s = Array2::<f64>::zeros((n, 1));
    let mut y = Array1::<f64>::zeros(n);
    let mut f = Array1::<f64>::zeros(n);
    for i in 0..n {
        let sv = cfg.sigma_s * normal(&mut rng);
        let xv = sv.abs().ln() + cfg.sigma_x * normal(&mut rng);
        let e = normal(&mut rng);
        f[i] = xv * xv + sv * sv;
        y[i] = f[i] + cfg.sigma_y * e;
        x[[i, 0]] = xv;
        s[[i, 0]] = sv;
    }
    Ok(Dataset {
        x,
        y,
        s,
        feature_names: vec!["x".into()],
        sensitive_names: vec!["s".into()],
        f_true: Some(f),
    })
}

/// Drops the sensitive columns from X; S is kept for auditing.
pub fn baseline_osv(ds: &Dataset) -> Result<Dataset> {
    let positions = ds.sensitive_in_x();
    if let Some(i) = positions.iter().position(|p| p.is_none()) {
        return Err(FairError::Data(format!("sensitive column '{}' is not an input column", ds.sensitive_names[i])));
    }
    let drop: HashSet<usize> = positions.into_iter().flatten().collect();
    let keep: Vec<usize> = (0..ds.x.ncols()).filter(|c| !drop.contains(c)).collect();
    if keep.is_empty() {
        return Err(FairError::Degenerate("omitting the sensitive columns leaves no inputs".into()));
    }
    Ok(Dataset {
        x: ds.x.select(Axis(1), &keep),
        feature_names: keep.iter().map(|&c| ds.feature_names[c].clone()).collect(),
        ..ds.clone()
    })
}

/// Replaces each non-sensitive input column by its least-squares residual on
/// `[S, 1]` and drops the sensitive columns. Linear residualization only.
pub fn baseline_frl(ds: &Dataset) -> Result<Dataset> {
    let n = ds.n();
    let q = ds.s.ncols();
    if n <= q {
        return Err(FairError::Degenerate(format!("residualization needs n > q ({n} <= {q})")));
    }
    let drop: HashSet<usize> = ds.sensitive_in_x().into_iter().flatten().collect();
    let keep: Vec<usize> = (0..ds.x.ncols()).filter(|c| !drop.contains(c)).collect();
    if keep.is_empty() {
        return Err(FairError::Degenerate("no non-sensitive inputs to residualize".into()));
    }
    let design = concatenate![Axis(1), ds.s.view(), Array2::<f64>::ones((n, 1)).view()];
    let gram = design.t().dot(&design);
    // PdFactor escalates a small ridge if S is rank deficient
    let factor = PdFactor::new(&gram)?;
    let xk = ds.x.select(Axis(1), &keep);
    let coef = factor.solve_mat(&design.t().dot(&xk))?;
    let resid = &xk - &design.dot(&coef);
    Ok(Dataset {
        x: resid,
        feature_names: keep.iter().map(|&c| ds.feature_names[c].clone()).collect(),
        ..ds.clone()
    })
}

/// Column layout for [`load_csv`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSpec {
    pub target: String,
    /// Copied into S. They also stay in X unless listed in `drop`.
    pub sensitive: Vec<String>,
    /// Removed from X before parsing.
    pub drop: Vec<String>,
    /// Optional column holding noiseless targets.
    pub truth: Option<String>,
    /// Column names for files without a header row.
    pub header: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub dropped_columns: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA" || t == "?"
}

/// Reads a comma-separated file. Cells that are empty, `NA` or `?` count as
/// missing and remove their row.
pub fn load_csv(path: &Path, spec: &CsvSpec) -> Result<(Dataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(spec.header.is_none())
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = match &spec.header {
        Some(h) => h.clone(),
        None => reader.headers()?.iter().map(str::to_string).collect(),
    };
    unique(&header, "column")?;
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FairError::Data(format!("column '{name}' not found")))
    };
    let target = find(&spec.target)?;
    let sensitive: Vec<usize> = spec.sensitive.iter().map(|s| find(s)).collect::<Result<_>>()?;
    let truth = spec.truth.as_deref().map(find).transpose()?;
    let dropped: HashSet<usize> = spec.drop.iter().map(|d| find(d)).collect::<Result<_>>()?;
    let features: Vec<usize> = (0..header.len())
        .filter(|c| *c != target && Some(*c) != truth && !dropped.contains(c))
        .collect();
    let needed: Vec<usize> = {
        let mut v: Vec<usize> = features.iter().chain(sensitive.iter()).copied().collect();
        v.push(target);
        v.extend(truth);
        v.sort_unstable();
        v.dedup();
        v
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut report = LoadReport {
        dropped_columns: spec.drop.clone(),
        ..Default::default()
    };
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(FairError::Data(format!(
                "row {} has {} cells, expected {}",
                line + 1,
                record.len(),
                header.len()
            )));
        }
        report.rows_read += 1;
        if needed.iter().any(|&c| is_missing(&record[c])) {
            report.rows_dropped += 1;
            continue;
        }
        let mut values = vec![f64::NAN; header.len()];
        for &c in &needed {
            values[c] = record[c].parse::<f64>().map_err(|_| {
                FairError::Data(format!("non-numeric value '{}' in column '{}' (row {})", &record[c], header[c], line + 1))
            })?;
            if !values[c].is_finite() {
                return Err(FairError::Data(format!("non-finite value in column '{}' (row {})", header[c], line + 1)));
            }
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(FairError::Data("no complete rows left".into()));
    }
    let n = rows.len();
    let column = |c: usize| Array1::from_iter(rows.iter().map(|r| r[c]));
    let gather = |cols: &[usize]| Array2::from_shape_fn((n, cols.len()), |(i, j)| rows[i][cols[j]]);
    let ds = Dataset {
        x: gather(&features),
        y: column(target),
        s: gather(&sensitive),
        feature_names: features.iter().map(|&c| header[c].clone()).collect(),
        sensitive_names: spec.sensitive.clone(),
        f_true: truth.map(column),
    };
    ds.validate()?;
    Ok((ds, report))
}

/// Writes inputs, sensitive columns not already among the inputs, `y` and
/// (when known) `f_true`, with 17 significant digits.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    let extra: Vec<usize> = ds
        .sensitive_in_x()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_none())
        .map(|(i, _)| i)
        .collect();
    let mut names: Vec<String> = ds.feature_names.clone();
    names.extend(extra.iter().map(|&i| ds.sensitive_names[i].clone()));
    names.push("y".into());
    if ds.f_true.is_some() {
        names.push("f_true".into());
    }
    writeln!(out, "{}", names.join(","))?;
    for i in 0..ds.n() {
        let mut cells: Vec<String> = ds.x.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        cells.extend(extra.iter().map(|&j| format!("{:.16e}", ds.s[[i, j]])));
        cells.push(format!("{:.16e}", ds.y[i]));
        if let Some(f) = &ds.f_true {
            cells.push(format!("{:.16e}", f[i]));
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Per-column statistics used by [`standardize`]; stddevs use the n-1 divisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    /// Input columns removed because they were constant.
    pub dropped_constant: Vec<String>,
}

impl StandardizationRecord {
    /// Maps standardized predictions back to the original target scale.
    pub fn inverse_y(&self, pred: ArrayView1<f64>) -> Array1<f64> {
        pred.mapv(|v| v * self.y_std + self.y_mean)
    }

    pub fn inverse_x(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.x_std[j] + self.x_mean[j]);
        }
        out
    }
}

fn mean_std(v: ArrayView1<f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let ss: f64 = v.iter().map(|e| (e - mean) * (e - mean)).sum();
    (mean, if v.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 })
}

/// Zero mean and unit sample stddev for every input column and the target.
/// Constant input columns are dropped and reported; S is left unchanged.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, StandardizationRecord)> {
    if ds.n() < 2 {
        return Err(FairError::Degenerate("standardization needs two rows".into()));
    }
    let (y_mean, y_std) = mean_std(ds.y.view());
    if y_std <= 0.0 {
        return Err(FairError::Degenerate("target is constant".into()));
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let (mut means, mut stds) = (Vec::new(), Vec::new());
    for (j, col) in ds.x.columns().into_iter().enumerate() {
        let (m, s) = mean_std(col);
        if s > 0.0 {
            keep.push(j);
            means.push(m);
            stds.push(s);
        } else {
            dropped.push(ds.feature_names[j].clone());
        }
    }
    if keep.is_empty() {
        return Err(FairError::Degenerate("all input columns are constant".into()));
    }
    let mut x = ds.x.select(Axis(1), &keep);
    for (j, mut col) in x.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| (v - means[j]) / stds[j]);
    }
    let scale = |v: &Array1<f64>| v.mapv(|e| (e - y_mean) / y_std);
    let out = Dataset {
        x,
        y: scale(&ds.y),
        s: ds.s.clone(),
        feature_names: keep.iter().map(|&j| ds.feature_names[j].clone()).collect(),
        sensitive_names: ds.sensitive_names.clone(),
        f_true: ds.f_true.as_ref().map(scale),
    };
    Ok((out, StandardizationRecord { x_mean: means, x_std: stds, y_mean, y_std, dropped_constant: dropped }))
}

/// Seeded permutation of `0..n` cut into `k` parts whose sizes differ by at
/// most one (the first `n % k` parts are larger).
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(FairError::InvalidParameter(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_for(seed, 0));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Seeded disjoint train/test split of `ds`.
pub fn train_test_split(ds: &Dataset, n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_train + n_test > ds.n() {
        return Err(FairError::InvalidParameter(format!(
            "cannot split {} rows into {n_train} train and {n_test} test",
            ds.n()
        )));
    }
    let mut perm: Vec<usize> = (0..ds.n()).collect();
    perm.shuffle(&mut rng_for(seed, 0));
    Ok((ds.subset(&perm[..n_train]), ds.subset(&perm[n_train..n_train + n_test])))
}
