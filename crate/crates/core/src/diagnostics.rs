//! Chain quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ChainRun;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Per-coordinate mean and variance (divisor `n - 1`) of the rows after
/// `burn_in`. `chain` is row-major with `dim` columns.
pub fn moments(chain: &[f64], dim: usize, burn_in: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = chain.len() / dim;
    if burn_in >= rows || rows - burn_in < 2 {
        return Err(Error::InsufficientData(format!(
            "{} rows after burn-in, need at least 2",
            rows.saturating_sub(burn_in)
        )));
    }
    let kept = &chain[burn_in * dim..];
    let (means, vars) = (0..dim)
        .map(|i| {
            let col: Vec<f64> = kept.iter().skip(i).step_by(dim).copied().collect();
            (mean(&col), sample_var(&col))
        })
        .unzip();
    Ok((means, vars))
}

fn default_batch(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).max(1)
}

/// Overlapping-batch-means estimate of the asymptotic variance of the series
/// mean (times `n`), with batch size `b` (default `floor(sqrt(n))`).
pub fn obm_variance(series: &[f64], batch_size: Option<usize>) -> Result<f64> {
    let n = series.len();
    let b = batch_size.unwrap_or_else(|| default_batch(n));
    if b == 0 || n < 2 * b || n < 2 {
        return Err(Error::InsufficientData(format!(
            "series of length {n} too short for batch size {b}"
        )));
    }
    // Windows run over the centred series so a large common offset does not
    // swamp the running sum.
    let overall = mean(series);
    let centred: Vec<f64> = series.iter().map(|x| x - overall).collect();
    let mut window: f64 = centred[..b].iter().sum();
    let mut ss = 0.0;
    for k in 0..=(n - b) {
        if k > 0 {
            window += centred[k + b - 1] - centred[k - 1];
        }
        let d = window / b as f64;
        ss += d * d;
    }
    let (nf, bf) = (n as f64, b as f64);
    Ok(nf * bf / ((nf - bf) * (nf - bf + 1.0)) * ss)
}

/// Inefficiency factor: OBM asymptotic variance over the sample variance,
/// floored at 1.
pub fn obm_if(series: &[f64], batch_size: Option<usize>) -> Result<f64> {
    let asym = obm_variance(series, batch_size)?;
    let s2 = sample_var(series);
    if !(s2 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((asym / s2).max(1.0))
}

/// Monte Carlo standard error of the series mean from OBM.
pub fn mcse(series: &[f64], batch_size: Option<usize>) -> Result<f64> {
    Ok((obm_variance(series, batch_size)? / series.len() as f64).sqrt())
}

/// Geweke z-score comparing the first `first_frac` against the last
/// `last_frac` of the series, each scaled by its OBM variance.
pub fn geweke_z(series: &[f64], first_frac: f64, last_frac: f64) -> Result<f64> {
    if !(first_frac > 0.0 && last_frac > 0.0 && first_frac + last_frac <= 1.0) {
        return Err(Error::Config(
            "Geweke fractions must be positive and non-overlapping".into(),
        ));
    }
    let n = series.len();
    let na = (first_frac * n as f64).floor() as usize;
    let nb = (last_frac * n as f64).floor() as usize;
    if na < 4 || nb < 4 {
        return Err(Error::InsufficientData("Geweke segments too short".into()));
    }
    let a = &series[..na];
    let b = &series[n - nb..];
    let (ma, mb) = (mean(a), mean(b));
    let va = obm_variance(a, None)?;
    let vb = obm_variance(b, None)?;
    let denom = (va / na as f64 + vb / nb as f64).sqrt();
    if denom == 0.0 {
        if ma == mb {
            return Ok(0.0);
        }
        return Err(Error::ZeroVariance);
    }
    Ok((ma - mb) / denom)
}

/// Effective samples per minute.
pub fn esm(sample_size: u64, if_estimate: f64, minutes: f64) -> f64 {
    sample_size as f64 / (if_estimate * minutes)
}

/// Autocorrelations at lags `0..=max_lag` with the biased (divisor `n`)
/// normalisation.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::InsufficientData(format!("max lag {max_lag} >= length {n}")));
    }
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum();
    if !(c0 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((0..=max_lag)
        .map(|k| {
            centered[..n - k]
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / c0
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    #[serde(with = "crate::numeric::nonfinite::vec")]
    pub post_mean: Vec<f64>,
    #[serde(with = "crate::numeric::nonfinite::vec")]
    pub post_var: Vec<f64>,
    #[serde(with = "crate::numeric::nonfinite")]
    pub post_mean_norm: f64,
    #[serde(with = "crate::numeric::nonfinite")]
    pub post_var_norm: f64,
    /// Monte Carlo standard error of each posterior mean (OBM).
    #[serde(with = "crate::numeric::nonfinite::vec")]
    pub post_mean_mcse: Vec<f64>,
    #[serde(with = "crate::numeric::nonfinite")]
    pub accept_rate: f64,
    #[serde(with = "crate::numeric::nonfinite::vec")]
    pub if_per_coord: Vec<f64>,
    #[serde(with = "crate::numeric::nonfinite")]
    pub if_sum: f64,
    #[serde(with = "crate::numeric::nonfinite::vec")]
    pub geweke_z: Vec<f64>,
    #[serde(with = "crate::numeric::nonfinite")]
    pub wall_clock_s: f64,
    #[serde(with = "crate::numeric::nonfinite")]
    pub esm: f64,
    pub retained: u64,
    pub burn_in: u64,
    pub final_n: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Summarises a chain after discarding `burn_in` iterations. Coordinates with
/// zero variance (a chain that never moved) get IF = +inf and a NaN Geweke
/// score rather than an error.
pub fn summarize(run: &ChainRun, burn_in: u64) -> Result<ChainSummary> {
    summarize_with(run, burn_in, None)
}

/// [`summarize`] with an explicit OBM batch size.
pub fn summarize_with(run: &ChainRun, burn_in: u64, batch_size: Option<usize>) -> Result<ChainSummary> {
    let (post_mean, post_var) = moments(&run.samples, run.dim, burn_in as usize)?;
    let retained = run.total - burn_in;
    let mut if_per_coord = Vec::with_capacity(run.dim);
    let mut geweke = Vec::with_capacity(run.dim);
    let mut mcses = Vec::with_capacity(run.dim);
    for i in 0..run.dim {
        let col: Vec<f64> = run.coordinate(i).split_off(burn_in as usize);
        if_per_coord.push(match obm_if(&col, batch_size) {
            Err(Error::ZeroVariance) => f64::INFINITY,
            other => other?,
        });
        mcses.push(mcse(&col, batch_size)?);
        geweke.push(geweke_z(&col, 0.2, 0.5).unwrap_or(f64::NAN));
    }
    let if_sum: f64 = if_per_coord.iter().sum();
    let minutes = run.elapsed_s / 60.0;
    Ok(ChainSummary {
        post_mean_norm: norm(&post_mean),
        post_var_norm: norm(&post_var),
        post_mean,
        post_var,
        post_mean_mcse: mcses,
        accept_rate: run.accept_rate(),
        if_per_coord,
        if_sum,
        geweke_z: geweke,
        wall_clock_s: run.elapsed_s,
        esm: esm(retained, if_sum, minutes),
        retained,
        burn_in,
        final_n: run.final_n(),
    })
}
