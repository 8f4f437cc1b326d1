//! The contract every target model implements.

use crate::error::Result;
use crate::param::ParamVector;
use crate::rng::RngStream;

/// Log of an unbiased likelihood estimate together with the recycled
/// evaluation obtained from the same auxiliary draws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateWithAux {
    /// `log p_hat(y | theta, V)`.
    pub log_lik: f64,
    /// `log p_hat(y | target, h(V, theta, target))`.
    pub recycled_log_lik: f64,
}

/// A latent-variable model usable by the pseudo-marginal samplers.
///
/// Implementations must supply a recycling transformation `h`: given
/// auxiliary draws `V ~ m_{N, theta}`, `h(V, theta, target)` is distributed
/// as `m_{N, target}`. Models without one cannot drive the adaptive
/// controller's noise estimate.
pub trait Model: Send + Sync {
    fn dim(&self) -> usize;

    /// Log prior density; `-inf` outside the support.
    fn log_prior(&self, theta: &ParamVector) -> f64;

    /// Exact log-likelihood, when the model has one in closed form.
    fn exact_loglik(&self, _theta: &ParamVector) -> Option<f64> {
        None
    }

    /// Draws `V | theta ~ m_{n, theta}` and returns the log estimate at
    /// `theta` plus the recycled log estimate at `target`. When `target`
    /// equals `theta` the two values are identical.
    fn estimate_loglik(
        &self,
        theta: &ParamVector,
        target: &ParamVector,
        n: usize,
        rng: &mut RngStream,
    ) -> Result<EstimateWithAux>;

    fn name(&self) -> &'static str;
}

/// Wraps a model so the estimator returns its exact log-likelihood without
/// consuming randomness. Pseudo-marginal steps on the wrapper reduce to
/// plain Metropolis–Hastings steps.
pub struct ExactAsEstimate<M>(pub M);

impl<M: Model> Model for ExactAsEstimate<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_prior(&self, theta: &ParamVector) -> f64 {
        self.0.log_prior(theta)
    }

    fn exact_loglik(&self, theta: &ParamVector) -> Option<f64> {
        self.0.exact_loglik(theta)
    }

    fn estimate_loglik(
        &self,
        theta: &ParamVector,
        target: &ParamVector,
        _n: usize,
        _rng: &mut RngStream,
    ) -> Result<EstimateWithAux> {
        let log_lik = self
            .0
            .exact_loglik(theta)
            .ok_or_else(|| crate::Error::Config("model has no exact likelihood".into()))?;
        let recycled_log_lik = self.0.exact_loglik(target).unwrap_or(f64::NAN);
        Ok(EstimateWithAux {
            log_lik,
            recycled_log_lik,
        })
    }

    fn name(&self) -> &'static str {
        self.0.name()
    }
}
