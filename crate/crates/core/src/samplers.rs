//! Entry points that wire a model, proposal, controller and RNG streams into
//! a complete run. Each run draws its initial estimate, kernel moves and
//! adaptation coin flips from distinct child streams of the run's stream, so
//! changing the adaptation schedule never perturbs the kernel's draws.

use crate::adaptation::{AdaptConfig, ApmController, FixedController};
use crate::error::Result;
use crate::kernel::{init_state, run_chain, run_mh, ChainRun};
use crate::model::Model;
use crate::param::ParamVector;
use crate::proposal::ProposalSpec;
use crate::rng::{purpose, RngStream};
use crate::trace::TraceSink;

/// Pseudo-marginal run with `n` particles throughout. `epoch_size` only sets
/// how often the recycled noise estimate is reported.
#[allow(clippy::too_many_arguments)]
pub fn run_pm<M: Model + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    prop: &ProposalSpec,
    n: usize,
    epoch_size: usize,
    iterations: u64,
    sink: &mut dyn TraceSink,
    rng: &RngStream,
) -> Result<ChainRun> {
    let init = init_state(model, theta0, n, &mut rng.child(purpose::INIT))?;
    let mut controller = FixedController::new(theta0, n, epoch_size);
    run_chain(
        init,
        model,
        prop,
        &mut controller,
        iterations,
        sink,
        &mut rng.child(purpose::KERNEL),
    )
}

/// Adaptive pseudo-marginal run starting from `config.n_init` particles.
pub fn run_apm<M: Model + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    prop: &ProposalSpec,
    config: &AdaptConfig,
    iterations: u64,
    sink: &mut dyn TraceSink,
    rng: &RngStream,
) -> Result<ChainRun> {
    let init = init_state(model, theta0, config.n_init, &mut rng.child(purpose::INIT))?;
    let mut controller = ApmController::new(config.clone(), theta0, rng.child(purpose::ADAPT))?;
    run_chain(
        init,
        model,
        prop,
        &mut controller,
        iterations,
        sink,
        &mut rng.child(purpose::KERNEL),
    )
}

/// Exact Metropolis–Hastings run.
pub fn run_exact_mh<M: Model + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    prop: &ProposalSpec,
    iterations: u64,
    sink: &mut dyn TraceSink,
    rng: &RngStream,
) -> Result<ChainRun> {
    run_mh(theta0, model, prop, iterations, sink, &mut rng.child(purpose::MH))
}
