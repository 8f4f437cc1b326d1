//! Non-adaptive particle-count tuning: a preliminary pseudo-marginal run, a
//! Monte Carlo estimate of the log-likelihood noise at the posterior mean
//! estimate, a bisection search for the `N` whose noise matches `sigma_opt`,
//! and a final run at that `N`.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{summarize, ChainSummary};
use crate::error::{Error, Result};
use crate::kernel::ChainRun;
use crate::model::Model;
use crate::param::ParamVector;
use crate::proposal::ProposalSpec;
use crate::rng::{purpose, RngStream};
use crate::samplers::run_pm;
use crate::trace::{NullSink, TraceSink};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub n_init: usize,
    pub prelim_iters: u64,
    pub mc_iters: usize,
    pub search_lo: usize,
    pub search_hi: usize,
    pub precision: usize,
    pub sigma_opt: f64,
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.search_lo == 0 || self.search_lo >= self.search_hi {
            return Err(Error::Config(format!(
                "search interval [{}, {}] must satisfy 0 < lo < hi",
                self.search_lo, self.search_hi
            )));
        }
        if self.mc_iters < 2 {
            return Err(Error::Config("mc_iters must be at least 2".into()));
        }
        if self.precision == 0 || self.n_init == 0 || self.prelim_iters < 2 {
            return Err(Error::Config(
                "precision, n_init and prelim_iters must be positive".into(),
            ));
        }
        if !(self.sigma_opt > 0.0) {
            return Err(Error::Config("sigma_opt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub iteration: usize,
    pub tested_n: usize,
    pub sigma_hat: f64,
    pub lo: usize,
    pub hi: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub rows: Vec<SearchRow>,
}

impl SearchTrace {
    /// CSV with header `tested_n,sigma_hat,lo,hi`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tested_n,sigma_hat,lo,hi")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.tested_n, r.sigma_hat, r.lo, r.hi)?;
        }
        Ok(())
    }

    /// Number of midpoint evaluations (the two endpoint rows excluded).
    pub fn midpoint_count(&self) -> usize {
        self.rows.iter().filter(|r| r.iteration > 0).count()
    }
}

/// Standard deviation (divisor `m - 1`) of `m` independent log-likelihood
/// estimates at `theta_hat` with `n` particles.
pub fn sigma_n_mc<M: Model + ?Sized>(
    model: &M,
    theta_hat: &ParamVector,
    n: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if m < 2 {
        return Err(Error::InsufficientData("need at least 2 replications".into()));
    }
    let mut draws = Vec::with_capacity(m);
    for _ in 0..m {
        let est = model.estimate_loglik(theta_hat, theta_hat, n, rng)?;
        if !est.log_lik.is_finite() {
            return Err(Error::DegenerateEstimator);
        }
        draws.push(est.log_lik);
    }
    let mean = draws.iter().sum::<f64>() / m as f64;
    let ss: f64 = draws.iter().map(|x| (x - mean).powi(2)).sum();
    Ok((ss / (m as f64 - 1.0)).sqrt())
}

/// Bisection on `N` for `sigma(N) = target`, where `sigma` is decreasing.
///
/// Both endpoints are evaluated first and must bracket the target. Each step
/// tests the midpoint `ceil((lo + hi) / 2)`, moving `lo` up when the noise is
/// still above target and `hi` down otherwise, until `hi - lo <= precision`.
/// Returns the tested `N` whose noise is closest to the target.
pub fn dichotomic_search_with<F>(
    mut eval: F,
    lo: usize,
    hi: usize,
    precision: usize,
    target: f64,
) -> Result<(usize, SearchTrace)>
where
    F: FnMut(usize) -> Result<f64>,
{
    if lo == 0 || lo >= hi || precision == 0 {
        return Err(Error::Config(format!("invalid search interval [{lo}, {hi}]")));
    }
    let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut tested: Vec<(usize, f64)> = Vec::new();
    let mut trace = SearchTrace::default();
    let (mut lo, mut hi) = (lo, hi);
    for n in [lo, hi] {
        let s = eval(n)?;
        cache.insert(n, s);
        tested.push((n, s));
        trace.rows.push(SearchRow {
            iteration: 0,
            tested_n: n,
            sigma_hat: s,
            lo,
            hi,
        });
    }
    let (sigma_lo, sigma_hi) = (cache[&lo], cache[&hi]);
    if !(sigma_lo > target && target > sigma_hi) {
        return Err(Error::Bracketing {
            lo,
            hi,
            sigma_lo,
            sigma_hi,
            target,
        });
    }
    let mut iteration = 0;
    while hi - lo > precision {
        let mid = (lo + hi).div_ceil(2);
        let s = match cache.get(&mid) {
            Some(&s) => s,
            None => {
                let s = eval(mid)?;
                cache.insert(mid, s);
                tested.push((mid, s));
                s
            }
        };
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
        iteration += 1;
        trace.rows.push(SearchRow {
            iteration,
            tested_n: mid,
            sigma_hat: s,
            lo,
            hi,
        });
    }
    let best = tested
        .iter()
        .copied()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|(n, _)| n)
        .expect("endpoints always tested");
    Ok((best, trace))
}

/// Bisection using [`sigma_n_mc`]; each tested `N` gets its own child stream.
pub fn dichotomic_search<M: Model + ?Sized>(
    model: &M,
    theta_hat: &ParamVector,
    config: &TuneConfig,
    rng: &RngStream,
) -> Result<(usize, SearchTrace)> {
    config.validate()?;
    dichotomic_search_with(
        |n| sigma_n_mc(model, theta_hat, n, config.mc_iters, &mut rng.child(n as u64)),
        config.search_lo,
        config.search_hi,
        config.precision,
        config.sigma_opt,
    )
}

/// Sample covariance of a row-major chain.
pub fn sample_covariance(samples: &[f64], dim: usize) -> DMatrix<f64> {
    let rows = samples.len() / dim;
    let m = DMatrix::from_row_slice(rows, dim, samples);
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(rows, dim, |i, j| m[(i, j)] - mean[j]);
    (centered.transpose() * &centered) / (rows as f64 - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub prelim_s: f64,
    pub search_s: f64,
    pub final_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub n_opt: usize,
    #[serde(with = "crate::numeric::nonfinite")]
    pub sigma_at_n_opt: f64,
    pub theta_hat: Vec<f64>,
    pub sigma_hat_cov: Vec<Vec<f64>>,
    pub prelim_accept_rate: f64,
    pub search: SearchTrace,
    pub final_summary: ChainSummary,
    pub times: StageTimes,
}

/// Runs the three stages. Stage 1 uses `prelim_prop`; stage 3 uses
/// `l_opt^2 * Sigma_hat / d` from the stage-1 chain and starts at its mean.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline<M: Model + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    prelim_prop: &ProposalSpec,
    l_opt: f64,
    config: &TuneConfig,
    final_iters: u64,
    final_burn_in: u64,
    epoch_size: usize,
    final_sink: &mut dyn TraceSink,
    rng: &RngStream,
) -> Result<(PipelineReport, ChainRun)> {
    config.validate()?;
    let dim = model.dim();
    let start = Instant::now();

    let prelim = run_pm(
        model,
        theta0,
        prelim_prop,
        config.n_init,
        epoch_size,
        config.prelim_iters,
        &mut NullSink,
        &rng.child(purpose::PRELIM),
    )?;
    let (theta_hat, _) = crate::diagnostics::moments(&prelim.samples, dim, 0)?;
    let theta_hat = ParamVector::new(theta_hat)?;
    let cov = sample_covariance(&prelim.samples, dim);
    let prelim_s = start.elapsed().as_secs_f64();

    let t_search = Instant::now();
    let (n_opt, search) = dichotomic_search(model, &theta_hat, config, &rng.child(purpose::SEARCH))?;
    let sigma_at_n_opt = search
        .rows
        .iter()
        .find(|r| r.tested_n == n_opt)
        .map(|r| r.sigma_hat)
        .unwrap_or(f64::NAN);
    let search_s = t_search.elapsed().as_secs_f64();

    let t_final = Instant::now();
    let final_prop = ProposalSpec::scaled(l_opt, &cov)?;
    let run = run_pm(
        model,
        &theta_hat,
        &final_prop,
        n_opt,
        epoch_size,
        final_iters,
        final_sink,
        &rng.child(purpose::FINAL),
    )?;
    let final_s = t_final.elapsed().as_secs_f64();
    let final_summary = summarize(&run, final_burn_in)?;

    let report = PipelineReport {
        n_opt,
        sigma_at_n_opt,
        theta_hat: theta_hat.into_vec(),
        sigma_hat_cov: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        prelim_accept_rate: prelim.accept_rate(),
        search,
        final_summary,
        times: StageTimes {
            prelim_s,
            search_s,
            final_s,
            total_s: start.elapsed().as_secs_f64(),
        },
    };
    Ok((report, run))
}
