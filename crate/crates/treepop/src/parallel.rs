//! Multi-threaded drivers. Results match the serial engines bit for bit
//! because every iteration and chain owns its own random stream.

use rayon::prelude::*;
use treepop_core::bayes::{run_chain, summarize};
use treepop_core::wmm::WmmPlan;
use treepop_core::{
    BayesError, BayesModel, ChainConfig, EvidenceTree, PosteriorSummary, WmmConfig, WmmError,
    WmmRun,
};

/// [`treepop_core::wmm::run_wmm`] with iterations spread over the thread pool.
pub fn run_wmm(tree: &EvidenceTree, config: &WmmConfig) -> Result<WmmRun, WmmError> {
    let plan = WmmPlan::new(tree)?;
    let draws = (0..config.iterations as u64)
        .into_par_iter()
        .map(|m| plan.sample_iteration(config.seed, m))
        .collect::<Result<Vec<_>, _>>()?;
    plan.finish(draws, config)
}

/// [`treepop_core::bayes::run_chains`] with one task per chain.
pub fn run_chains(
    model: &BayesModel,
    config: &ChainConfig,
) -> Result<PosteriorSummary, BayesError> {
    config.validate(model.free_latents().len())?;
    let outputs = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(model, config, c))
        .collect::<Result<Vec<_>, _>>()?;
    summarize(model, &outputs, config.keep_traces)
}
