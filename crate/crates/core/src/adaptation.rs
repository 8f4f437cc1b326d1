//! Adaptive particle-count controller.
//!
//! Every `K` iterations the controller estimates the standard deviation of
//! the log-likelihood noise from the recycled evaluations gathered during the
//! epoch (all made at the same running mean `theta_hat`) and nudges `N` by
//! `a` toward the noise level `sigma_opt`, with probability `p_j` so that the
//! adaptation diminishes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Controller, EpochReport};
use crate::numeric::CompensatedSum;
use crate::param::ParamVector;
use crate::rng::RngStream;

/// Adaptation probability `p_j` as a function of the epoch index `j >= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum ProbSchedule {
    /// `j^{-1/2}`.
    InvSqrt,
    /// `j^{-k}` for `k > 0`.
    Power(f64),
    /// Constant `p`. Only `p = 0` satisfies diminishing adaptation; other
    /// values exist for diagnostics.
    Constant(f64),
}

impl ProbSchedule {
    pub fn prob(&self, j: u64) -> f64 {
        let j = j.max(1) as f64;
        match *self {
            ProbSchedule::InvSqrt => 1.0 / j.sqrt(),
            ProbSchedule::Power(k) => j.powf(-k),
            ProbSchedule::Constant(p) => p,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "inv-sqrt" {
            return Ok(ProbSchedule::InvSqrt);
        }
        let bad = || {
            Error::Config(format!(
                "unknown probability schedule {s:?}; use inv-sqrt, power:K or const:P"
            ))
        };
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = value.parse().map_err(|_| bad())?;
        match kind {
            "power" if value > 0.0 => Ok(ProbSchedule::Power(value)),
            "const" if (0.0..=1.0).contains(&value) => Ok(ProbSchedule::Constant(value)),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for ProbSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbSchedule::InvSqrt => write!(f, "inv-sqrt"),
            ProbSchedule::Power(k) => write!(f, "power:{k}"),
            ProbSchedule::Constant(p) => write!(f, "const:{p}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub epoch_size: usize,
    pub step_size: usize,
    pub sigma_opt: f64,
    pub sigma_tol: f64,
    pub schedule: ProbSchedule,
    pub n_init: usize,
}

impl AdaptConfig {
    pub fn new(sigma_opt: f64, n_init: usize) -> Self {
        Self {
            epoch_size: 100,
            step_size: 1,
            sigma_opt,
            sigma_tol: 0.015,
            schedule: ProbSchedule::InvSqrt,
            n_init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epoch_size < 2 {
            return Err(Error::Config("epoch size must be at least 2".into()));
        }
        if self.step_size == 0 || self.n_init == 0 {
            return Err(Error::Config("step size and initial N must be positive".into()));
        }
        if !(self.sigma_opt > 0.0) || !(self.sigma_tol > 0.0) || self.sigma_tol >= self.sigma_opt {
            return Err(Error::Config("need 0 < sigma_tol < sigma_opt".into()));
        }
        Ok(())
    }
}

/// Square root of the unbiased sample variance of one epoch's recycled
/// log-likelihoods.
pub fn epoch_sigma_hat(buffer: &[f64]) -> Result<f64> {
    if buffer.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "epoch holds {} values, need at least 2",
            buffer.len()
        )));
    }
    if buffer.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidEpoch);
    }
    let k = buffer.len() as f64;
    let mean = buffer.iter().sum::<f64>() / k;
    let ss: f64 = buffer.iter().map(|x| (x - mean).powi(2)).sum();
    Ok((ss / (k - 1.0)).sqrt())
}

/// Direction `kappa` the controller would move `N` in, before the
/// probability-`p_j` coin flip: `+1` above the dead zone, `-1` below it when
/// `N > a`, `0` otherwise.
pub fn direction(sigma_hat: f64, n: usize, config: &AdaptConfig) -> i8 {
    if sigma_hat > config.sigma_opt + config.sigma_tol {
        1
    } else if sigma_hat < config.sigma_opt - config.sigma_tol && n > config.step_size {
        -1
    } else {
        0
    }
}

/// Epoch bookkeeping: running parameter mean, the open epoch's buffer and the
/// current particle count.
#[derive(Clone, Debug)]
pub struct AdaptState {
    pub epoch_index: u64,
    pub n_current: usize,
    pub theta_mean: ParamVector,
    theta_sum: Vec<CompensatedSum>,
    pub iter_count: u64,
    pub epoch_buffer: Vec<f64>,
    pub sigma_hat_last: Option<f64>,
    pub adapt_events: u64,
    epoch_size: usize,
}

impl AdaptState {
    /// `theta_hat_0 = theta_0`.
    pub fn new(theta0: &ParamVector, n_init: usize, epoch_size: usize) -> Self {
        Self {
            epoch_index: 0,
            n_current: n_init,
            theta_mean: theta0.clone(),
            theta_sum: vec![CompensatedSum::default(); theta0.dim()],
            iter_count: 0,
            epoch_buffer: Vec::with_capacity(epoch_size),
            sigma_hat_last: None,
            adapt_events: 0,
            epoch_size,
        }
    }

    pub fn epoch_size(&self) -> usize {
        self.epoch_size
    }

    pub fn theta_sum(&self) -> Vec<f64> {
        self.theta_sum.iter().map(CompensatedSum::value).collect()
    }

    /// Records the post-decision chain value and this iteration's recycled
    /// log-likelihood. The running mean is not refreshed here.
    pub fn observe(&mut self, theta: &ParamVector, recycled_log_lik: f64) -> Result<()> {
        if self.epoch_buffer.len() >= self.epoch_size {
            return Err(Error::EpochOverflow(self.epoch_size));
        }
        for (acc, &x) in self.theta_sum.iter_mut().zip(theta.as_slice()) {
            acc.add(x);
        }
        self.iter_count += 1;
        self.epoch_buffer.push(recycled_log_lik);
        Ok(())
    }

    pub fn at_boundary(&self) -> bool {
        self.iter_count > 0 && self.iter_count.is_multiple_of(self.epoch_size as u64)
    }

    /// Closes the epoch using the buffered recycled values.
    pub fn epoch_boundary(&mut self, config: &AdaptConfig, rng: &mut RngStream) -> Result<EpochReport> {
        let sigma = match epoch_sigma_hat(&self.epoch_buffer) {
            Ok(s) => Some(s),
            Err(Error::InvalidEpoch) => None,
            Err(e) => return Err(e),
        };
        self.close_epoch(sigma, Some((config, rng)))
    }

    /// Closes the epoch with a given noise estimate. With `adapt = None` the
    /// epoch is only monitored and `N` never changes.
    pub fn close_epoch(
        &mut self,
        sigma_hat: Option<f64>,
        adapt: Option<(&AdaptConfig, &mut RngStream)>,
    ) -> Result<EpochReport> {
        if !self.at_boundary() {
            return Err(Error::InsufficientData(format!(
                "epoch boundary requested at iteration {}",
                self.iter_count
            )));
        }
        let j = self.iter_count / self.epoch_size as u64;
        let n_before = self.n_current;
        if let (Some(sigma), Some((config, rng))) = (sigma_hat, adapt) {
            let dir = direction(sigma, self.n_current, config);
            if dir != 0 && rng.uniform() < config.schedule.prob(j) {
                self.n_current = if dir > 0 {
                    self.n_current + config.step_size
                } else {
                    self.n_current - config.step_size
                };
                self.adapt_events += 1;
            }
        }
        let count = self.iter_count as f64;
        let mean = self.theta_sum.iter().map(|s| s.value() / count).collect();
        self.theta_mean = ParamVector::new(mean)?;
        self.epoch_index = j;
        self.epoch_buffer.clear();
        self.sigma_hat_last = sigma_hat;
        Ok(EpochReport {
            epoch: j,
            iter: self.iter_count,
            sigma_hat,
            n_before,
            n_after: self.n_current,
        })
    }
}

/// Plain pseudo-marginal: `N` fixed. Epochs are still monitored so the trace
/// reports the recycled noise estimate.
pub struct FixedController {
    state: AdaptState,
}

impl FixedController {
    pub fn new(theta0: &ParamVector, n: usize, epoch_size: usize) -> Self {
        Self {
            state: AdaptState::new(theta0, n, epoch_size),
        }
    }

    pub fn state(&self) -> &AdaptState {
        &self.state
    }
}

impl Controller for FixedController {
    fn n_particles(&self) -> usize {
        self.state.n_current
    }

    fn recycle_target(&self) -> &ParamVector {
        &self.state.theta_mean
    }

    fn after_step(&mut self, theta: &ParamVector, recycled_log_lik: f64) -> Result<Option<EpochReport>> {
        self.state.observe(theta, recycled_log_lik)?;
        if !self.state.at_boundary() {
            return Ok(None);
        }
        let sigma = epoch_sigma_hat(&self.state.epoch_buffer).ok();
        self.state.close_epoch(sigma, None).map(Some)
    }
}

/// The adaptive controller. Coin flips come from a stream owned by the
/// controller, separate from the kernel's stream.
pub struct ApmController {
    config: AdaptConfig,
    state: AdaptState,
    rng: RngStream,
}

impl ApmController {
    pub fn new(config: AdaptConfig, theta0: &ParamVector, rng: RngStream) -> Result<Self> {
        config.validate()?;
        let state = AdaptState::new(theta0, config.n_init, config.epoch_size);
        Ok(Self { config, state, rng })
    }

    pub fn state(&self) -> &AdaptState {
        &self.state
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.config
    }
}

impl Controller for ApmController {
    fn n_particles(&self) -> usize {
        self.state.n_current
    }

    fn recycle_target(&self) -> &ParamVector {
        &self.state.theta_mean
    }

    fn after_step(&mut self, theta: &ParamVector, recycled_log_lik: f64) -> Result<Option<EpochReport>> {
        self.state.observe(theta, recycled_log_lik)?;
        if !self.state.at_boundary() {
            return Ok(None);
        }
        self.state.epoch_boundary(&self.config, &mut self.rng).map(Some)
    }
}
