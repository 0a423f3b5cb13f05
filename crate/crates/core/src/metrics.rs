//! Dependence measures (HSIC, NOCCO) and prediction metrics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FairError, Result};
use crate::kernels::center_gram;
use crate::linalg::PdFactor;

/// Default number of histogram bins per axis for the plug-in MI estimate.
pub const DEFAULT_MI_BINS: usize = 16;

/// Dependence statistics of a prediction vector against the sensitive data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    pub hsic: f64,
    pub nocco: f64,
    pub corr: f64,
    pub mi: f64,
}

fn square(context: &'static str, m: &ArrayView2<f64>) -> Result<usize> {
    check_dim(context, m.nrows(), m.ncols())?;
    Ok(m.nrows())
}

/// Biased empirical HSIC `(1/n²) Tr(M H L H)`.
pub fn hsic(m: ArrayView2<f64>, l: ArrayView2<f64>) -> Result<f64> {
    let n = square("hsic: M must be square", &m)?;
    let nl = square("hsic: L must be square", &l)?;
    check_dim("hsic: matrix sizes", n, nl)?;
    if n == 0 {
        return Err(FairError::Degenerate("hsic of an empty sample".into()));
    }
    let centered = center_gram(&l.to_owned())?;
    // Tr(M·HLH) = Σ_ij M_ji (HLH)_ij
    let tr: f64 = m
        .t()
        .iter()
        .zip(centered.iter())
        .map(|(a, b)| a * b)
        .sum();
    Ok(tr / (n * n) as f64)
}

/// HSIC with a linear kernel on the predictions: `(1/n²) fᵀ H L H f`.
pub fn hsic_linear_predictions(f: ArrayView1<f64>, l: ArrayView2<f64>) -> Result<f64> {
    let n = square("hsic_linear_predictions: L must be square", &l)?;
    check_dim("hsic_linear_predictions: prediction length", n, f.len())?;
    if n == 0 {
        return Err(FairError::Degenerate("hsic of an empty sample".into()));
    }
    let g = centered(f);
    Ok(g.dot(&l.dot(&g)) / (n * n) as f64)
}

/// Same as [`hsic_linear_predictions`] but with `HLH` already formed.
pub fn hsic_linear_centered(f: ArrayView1<f64>, centered_l: &Array2<f64>) -> Result<f64> {
    let n = centered_l.nrows();
    check_dim("hsic_linear_centered: prediction length", n, f.len())?;
    let g = centered(f);
    Ok(g.dot(&centered_l.dot(&g)) / (n * n) as f64)
}

pub(crate) fn centered(f: ArrayView1<f64>) -> Array1<f64> {
    let mean = f.mean().unwrap_or(0.0);
    f.mapv(|v| v - mean)
}

/// `R = HGH (HGH + nεI)^{-1}` for a Gram matrix `G`.
pub fn normalized_operator(g: ArrayView2<f64>, eps: f64) -> Result<Array2<f64>> {
    let n = square("normalized_operator: Gram must be square", &g)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(FairError::InvalidParameter(format!(
            "NOCCO regularizer must be positive, got {eps}"
        )));
    }
    let c = center_gram(&g.to_owned())?;
    let mut shifted = c.clone();
    shifted
        .diag_mut()
        .mapv_inplace(|v| v + n as f64 * eps);
    let factor = PdFactor::new(&shifted)?;
    // (C + nεI)^{-1} C, equal to C (C + nεI)^{-1} since both commute
    let r = factor.solve_mat(&c)?;
    Ok(crate::linalg::symmetrize(&r))
}

/// Hilbert-Schmidt norm of the normalized cross-covariance operator,
/// `Tr(R_K R_L)`.
pub fn nocco(k: ArrayView2<f64>, l: ArrayView2<f64>, eps: f64) -> Result<f64> {
    let n = square("nocco: K must be square", &k)?;
    let nl = square("nocco: L must be square", &l)?;
    check_dim("nocco: matrix sizes", n, nl)?;
    let rk = normalized_operator(k, eps)?;
    let rl = normalized_operator(l, eps)?;
    Ok(rk.iter().zip(rl.iter()).map(|(a, b)| a * b).sum())
}

/// NOCCO between a prediction vector (linear kernel) and the sensitive data,
/// given `R_L`. The rank-one `R_f = g gᵀ / (gᵀg + nε)` with `g = H f`.
pub fn nocco_predictions(f: ArrayView1<f64>, r_l: &Array2<f64>, eps: f64) -> Result<f64> {
    let n = r_l.nrows();
    check_dim("nocco_predictions: prediction length", n, f.len())?;
    let g = centered(f);
    let gg = g.dot(&g);
    let denom = gg + n as f64 * eps;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok(g.dot(&r_l.dot(&g)) / denom)
}

fn check_pair(context: &'static str, a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> Result<()> {
    check_dim(context, a.len(), b.len())?;
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(FairError::NonFinite(context));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson_corr(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    check_pair("pearson_corr", &a, &b)?;
    let n = a.len();
    if n < 2 {
        return Err(FairError::Degenerate("correlation needs two samples".into()));
    }
    let ca = centered(a);
    let cb = centered(b);
    let saa = ca.dot(&ca);
    let sbb = cb.dot(&cb);
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(FairError::Degenerate(
            "correlation of a constant vector is undefined".into(),
        ));
    }
    Ok((ca.dot(&cb) / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn bin_index(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((v - lo) / width) as usize).min(bins - 1)
}

/// Plug-in mutual information (nats) of the equal-width 2-D histogram.
pub fn mutual_information_plugin(a: ArrayView1<f64>, b: ArrayView1<f64>, bins: usize) -> Result<f64> {
    check_pair("mutual_information_plugin", &a, &b)?;
    if bins == 0 {
        return Err(FairError::InvalidParameter("bins must be positive".into()));
    }
    let n = a.len();
    if n < bins {
        return Err(FairError::InvalidParameter(format!(
            "need at least {bins} samples for {bins} bins, got {n}"
        )));
    }
    let range = |x: &ArrayView1<f64>| {
        x.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let (alo, ahi) = range(&a);
    let (blo, bhi) = range(&b);
    if ahi <= alo || bhi <= blo {
        return Ok(0.0);
    }
    let (aw, bw) = ((ahi - alo) / bins as f64, (bhi - blo) / bins as f64);
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for (&x, &y) in a.iter().zip(b.iter()) {
        let i = bin_index(x, alo, aw, bins);
        let j = bin_index(y, blo, bw, bins);
        joint[i * bins + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let pxy = c as f64 / nf;
                mi += pxy * (pxy * nf * nf / (pa[i] as f64 * pb[j] as f64)).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

pub fn rmse(pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64> {
    check_pair("rmse", &pred, &truth)?;
    if pred.is_empty() {
        return Err(FairError::Degenerate("rmse of an empty sample".into()));
    }
    let sse: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Coefficient of determination; negative when worse than the mean.
pub fn r_squared(pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64> {
    check_pair("r_squared", &pred, &truth)?;
    let ct = centered(truth);
    let sst = ct.dot(&ct);
    if sst <= 0.0 {
        return Err(FairError::Degenerate("r_squared with constant truth".into()));
    }
    let sse: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - sse / sst)
}

/// Audits prediction vectors against one fixed sensitive sample.
#[derive(Debug, Clone)]
pub struct DependenceAuditor {
    centered_l: Array2<f64>,
    r_l: Array2<f64>,
    sensitive: Array2<f64>,
    eps: f64,
    bins: usize,
}

impl DependenceAuditor {
    /// `l` is the sensitive Gram on the audited sample, `sensitive` the raw
    /// sensitive columns (used for correlation and MI).
    pub fn new(l: &Array2<f64>, sensitive: ArrayView2<f64>, eps: f64, bins: usize) -> Result<Self> {
        check_dim("auditor: sensitive rows", l.nrows(), sensitive.nrows())?;
        Ok(Self {
            centered_l: center_gram(l)?,
            r_l: normalized_operator(l.view(), eps)?,
            sensitive: sensitive.to_owned(),
            eps,
            bins,
        })
    }

    pub fn centered_l(&self) -> &Array2<f64> {
        &self.centered_l
    }

    /// HSIC (floored at zero), NOCCO, the largest-magnitude correlation with a
    /// sensitive column and the mean plug-in MI over sensitive columns.
    pub fn report(&self, pred: ArrayView1<f64>) -> Result<DependenceReport> {
        let hsic = hsic_linear_centered(pred, &self.centered_l)?.max(0.0);
        let nocco = nocco_predictions(pred, &self.r_l, self.eps)?;
        let mut corr = 0.0f64;
        let mut mi = 0.0;
        let q = self.sensitive.ncols();
        for col in self.sensitive.columns() {
            let c = pearson_corr(pred, col).unwrap_or(0.0);
            if c.abs() > corr.abs() {
                corr = c;
            }
            mi += mutual_information_plugin(pred, col, self.bins)?;
        }
        Ok(DependenceReport {
            hsic,
            nocco,
            corr,
            mi: if q > 0 { mi / q as f64 } else { 0.0 },
        })
    }
}
