//! Metropolis–Hastings and pseudo-marginal transition kernels and the chain
//! driver.
//!
//! Proposals are symmetric random walks, so proposal densities cancel and the
//! acceptance ratio involves only (estimated) likelihoods and priors.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::param::ParamVector;
use crate::proposal::{propose, ProposalSpec};
use crate::rng::RngStream;
use crate::trace::{TraceRecord, TraceSink};

/// Current point of a pseudo-marginal chain. The likelihood weight is never
/// formed; only the log estimate is carried.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub theta: ParamVector,
    pub log_lik_est: f64,
    pub n_particles: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub proposed: ParamVector,
    pub log_lik_proposed: f64,
    pub recycled_log_lik: f64,
    pub accepted: bool,
}

/// Summary of an epoch boundary, emitted by controllers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: u64,
    pub iter: u64,
    /// `None` when the epoch was invalidated by a zero estimate.
    pub sigma_hat: Option<f64>,
    pub n_before: usize,
    pub n_after: usize,
}

/// Supplies the particle count for each iteration and consumes the recycled
/// log-likelihoods the kernel produces.
pub trait Controller {
    fn n_particles(&self) -> usize;

    /// Point at which the recycled estimate is evaluated.
    fn recycle_target(&self) -> &ParamVector;

    /// Called once per iteration with the post-decision chain value.
    fn after_step(&mut self, theta: &ParamVector, recycled_log_lik: f64) -> Result<Option<EpochReport>>;
}

/// Accepts iff `log u < log_post_proposed - log_post_current`.
///
/// A uniform is drawn on every call so the stream advances identically
/// regardless of the decision.
pub fn mh_accept_log(log_post_current: f64, log_post_proposed: f64, rng: &mut RngStream) -> Result<bool> {
    if log_post_current == f64::NEG_INFINITY && log_post_proposed == f64::NEG_INFINITY {
        return Err(Error::InvalidChainState);
    }
    let u = rng.uniform();
    let diff = log_post_proposed - log_post_current;
    Ok(diff >= 0.0 || u.ln() < diff)
}

/// Draws a fresh estimate at `theta0`. A zero estimate is an error here,
/// unlike during sampling.
pub fn init_state<M: Model + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    n: usize,
    rng: &mut RngStream,
) -> Result<ChainState> {
    theta0.expect_dim(model.dim())?;
    if model.log_prior(theta0) == f64::NEG_INFINITY {
        return Err(Error::Config("initial point outside the prior support".into()));
    }
    let est = model.estimate_loglik(theta0, theta0, n, rng)?;
    if est.log_lik == f64::NEG_INFINITY {
        return Err(Error::ZeroInitialEstimate);
    }
    Ok(ChainState {
        theta: theta0.clone(),
        log_lik_est: est.log_lik,
        n_particles: n,
    })
}

/// One pseudo-marginal step with `n` particles. On rejection the returned
/// state is the input state unchanged: the estimate at the current point is
/// never refreshed.
pub fn pm_step<M: Model + ?Sized>(
    state: &ChainState,
    model: &M,
    prop: &ProposalSpec,
    n: usize,
    recycle_target: &ParamVector,
    rng: &mut RngStream,
) -> Result<(ChainState, StepOutcome)> {
    let proposed = propose(&state.theta, prop, rng);
    let prior_prop = model.log_prior(&proposed);
    if prior_prop == f64::NEG_INFINITY {
        // Outside the support: reject without touching the estimator at the
        // proposal. The recycled value is drawn directly at the target,
        // which has the law the recycling map would have produced.
        let est = model.estimate_loglik(recycle_target, recycle_target, n, rng)?;
        let outcome = StepOutcome {
            proposed,
            log_lik_proposed: f64::NEG_INFINITY,
            recycled_log_lik: est.log_lik,
            accepted: false,
        };
        return Ok((state.clone(), outcome));
    }
    let est = model.estimate_loglik(&proposed, recycle_target, n, rng)?;
    let current = state.log_lik_est + model.log_prior(&state.theta);
    let candidate = est.log_lik + prior_prop;
    let accepted = if est.log_lik == f64::NEG_INFINITY {
        rng.uniform();
        false
    } else {
        mh_accept_log(current, candidate, rng)?
    };
    let next = if accepted {
        ChainState {
            theta: proposed.clone(),
            log_lik_est: est.log_lik,
            n_particles: n,
        }
    } else {
        state.clone()
    };
    Ok((
        next,
        StepOutcome {
            proposed,
            log_lik_proposed: est.log_lik,
            recycled_log_lik: est.recycled_log_lik,
            accepted,
        },
    ))
}

/// One exact Metropolis–Hastings step. `log_post` is the unnormalised log
/// posterior at `theta`.
pub fn mh_step<M: Model + ?Sized>(
    theta: &ParamVector,
    log_lik: f64,
    model: &M,
    prop: &ProposalSpec,
    rng: &mut RngStream,
) -> Result<(ParamVector, f64, bool)> {
    let proposed = propose(theta, prop, rng);
    let prior_prop = model.log_prior(&proposed);
    let lik_prop = if prior_prop == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        model
            .exact_loglik(&proposed)
            .ok_or_else(|| Error::Config(format!("{} has no exact likelihood", model.name())))?
    };
    let accepted = mh_accept_log(log_lik + model.log_prior(theta), lik_prop + prior_prop, rng)?;
    Ok(if accepted {
        (proposed, lik_prop, true)
    } else {
        (theta.clone(), log_lik, false)
    })
}

/// Output of a chain run: retained draws, particle-count path and epochs.
#[derive(Clone, Debug)]
pub struct ChainRun {
    pub dim: usize,
    pub final_state: ChainState,
    pub accepted: u64,
    pub total: u64,
    pub elapsed_s: f64,
    /// Row-major `total x dim` draws `theta_1..theta_L`.
    pub samples: Vec<f64>,
    /// `N_l` after each iteration.
    pub n_trace: Vec<usize>,
    pub epochs: Vec<EpochReport>,
}

impl ChainRun {
    pub fn accept_rate(&self) -> f64 {
        self.accepted as f64 / self.total as f64
    }

    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.samples.iter().skip(i).step_by(self.dim).copied().collect()
    }

    pub fn final_n(&self) -> usize {
        self.final_state.n_particles
    }
}

fn record_or_abort(sink: &mut dyn TraceSink, rec: &TraceRecord) -> Result<()> {
    if let Err(e) = sink.record(rec) {
        let _ = sink.flush();
        return Err(e);
    }
    Ok(())
}

/// Runs `iterations` pseudo-marginal steps, taking `N` from `controller`
/// each iteration and streaming every iteration to `sink`.
pub fn run_chain<M: Model + ?Sized>(
    init: ChainState,
    model: &M,
    prop: &ProposalSpec,
    controller: &mut dyn Controller,
    iterations: u64,
    sink: &mut dyn TraceSink,
    rng: &mut RngStream,
) -> Result<ChainRun> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be positive".into()));
    }
    let dim = model.dim();
    let start = Instant::now();
    let mut state = init;
    let mut accepted = 0u64;
    let mut samples = Vec::with_capacity(iterations as usize * dim);
    let mut n_trace = Vec::with_capacity(iterations as usize);
    let mut epochs = Vec::new();
    for iter in 1..=iterations {
        let n = controller.n_particles();
        let (next, outcome) = pm_step(&state, model, prop, n, controller.recycle_target(), rng)?;
        state = next;
        accepted += u64::from(outcome.accepted);
        let report = controller.after_step(&state.theta, outcome.recycled_log_lik)?;
        state.n_particles = controller.n_particles();
        samples.extend_from_slice(state.theta.as_slice());
        n_trace.push(state.n_particles);
        let sigma_hat = report.map(|r| r.sigma_hat.unwrap_or(f64::NAN));
        if let Some(r) = report {
            epochs.push(r);
        }
        record_or_abort(
            sink,
            &TraceRecord {
                iter,
                theta: state.theta.as_slice().to_vec(),
                n_particles: state.n_particles,
                log_lik_est: state.log_lik_est,
                accepted: outcome.accepted,
                recycled_log_lik: Some(outcome.recycled_log_lik),
                sigma_hat,
            },
        )?;
    }
    sink.flush()?;
    Ok(ChainRun {
        dim,
        final_state: state,
        accepted,
        total: iterations,
        elapsed_s: start.elapsed().as_secs_f64(),
        samples,
        n_trace,
        epochs,
    })
}

/// Runs exact Metropolis–Hastings; requires a closed-form likelihood.
/// Trace rows carry `n_particles = 0` and blank recycled values.
pub fn run_mh<M: Model + ?Sized>(
    theta0: &ParamVector,
    model: &M,
    prop: &ProposalSpec,
    iterations: u64,
    sink: &mut dyn TraceSink,
    rng: &mut RngStream,
) -> Result<ChainRun> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be positive".into()));
    }
    let dim = model.dim();
    let mut log_lik = model
        .exact_loglik(theta0)
        .ok_or_else(|| Error::Config(format!("{} has no exact likelihood; MH is unavailable", model.name())))?;
    let start = Instant::now();
    let mut theta = theta0.clone();
    let mut accepted = 0u64;
    let mut samples = Vec::with_capacity(iterations as usize * dim);
    for iter in 1..=iterations {
        let (next, ll, acc) = mh_step(&theta, log_lik, model, prop, rng)?;
        theta = next;
        log_lik = ll;
        accepted += u64::from(acc);
        samples.extend_from_slice(theta.as_slice());
        record_or_abort(
            sink,
            &TraceRecord {
                iter,
                theta: theta.as_slice().to_vec(),
                n_particles: 0,
                log_lik_est: log_lik,
                accepted: acc,
                recycled_log_lik: None,
                sigma_hat: None,
            },
        )?;
    }
    sink.flush()?;
    Ok(ChainRun {
        dim,
        final_state: ChainState {
            theta,
            log_lik_est: log_lik,
            n_particles: 0,
        },
        accepted,
        total: iterations,
        elapsed_s: start.elapsed().as_secs_f64(),
        samples,
        n_trace: vec![0; iterations as usize],
        epochs: Vec::new(),
    })
}
