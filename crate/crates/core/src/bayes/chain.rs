use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::model::BayesModel;
use super::{BayesError, LatentKernel, LatentState};
use crate::diagnostics;
use crate::rng::RngStream;
use crate::samplers::sample_dirichlet;
use crate::stats;

/// Iterations per step-size tuning window during burn-in.
const TUNING_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub chains: usize,
    /// Total iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Random-walk half-widths per free latent; `None` derives them from the
    /// initial state.
    pub step_sizes: Option<Vec<u64>>,
    /// Adapt step sizes during burn-in toward 20–50% acceptance.
    pub tune: bool,
    pub kernel: LatentKernel,
    /// Keep thinned per-chain traces in the summary.
    pub keep_traces: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            chains: 6,
            iterations: 200_000,
            burn_in: 100_000,
            thin: 10,
            seed: 0,
            step_sizes: None,
            tune: true,
            kernel: LatentKernel::Collapsed,
            keep_traces: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self, free_latents: usize) -> Result<(), BayesError> {
        if self.chains < 2 {
            return Err(BayesError::BadConfig("at least 2 chains are required"));
        }
        if self.iterations == 0 {
            return Err(BayesError::BadConfig("iterations must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(BayesError::BadConfig("burn-in must be below iterations"));
        }
        if self.thin == 0 {
            return Err(BayesError::BadConfig("thin must be positive"));
        }
        if let Some(h) = &self.step_sizes {
            if h.len() != free_latents {
                return Err(BayesError::BadConfig("one step size per free latent"));
            }
            if h.contains(&0) {
                return Err(BayesError::BadConfig("step sizes must be positive"));
            }
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Proposal bookkeeping for one free latent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub step_size: u64,
    pub proposed: u64,
    pub accepted: u64,
}

impl StepStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Kept draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    /// One series per quantity, in [`BayesModel::quantity_names`] order.
    pub traces: Vec<Vec<f64>>,
    /// Post-burn-in proposal statistics per free latent.
    pub steps: Vec<StepStats>,
}

impl BayesModel {
    /// Reported quantities: the count of every node without data (root,
    /// internal and latent) in model order, then every branch probability as
    /// `{group}_{child}`.
    pub fn quantity_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .nodes
            .iter()
            .filter(|n| n.observed.is_none())
            .map(|n| String::from(n.id.as_str()))
            .collect();
        for g in &self.groups {
            for &c in &g.children {
                names.push(format!("{}_{}", g.name, self.nodes[c].id));
            }
        }
        names
    }

    fn record(&self, state: &LatentState, out: &mut [Vec<f64>]) {
        let mut q = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.observed.is_none() {
                out[q].push(state.counts[i] as f64);
                q += 1;
            }
        }
        for probs in &state.branch_probs {
            for &p in probs {
                out[q].push(p);
                q += 1;
            }
        }
    }
}

/// Redraw every group's probabilities from `Dirichlet(α + child counts)`.
pub fn gibbs_update_branch_probs(
    model: &BayesModel,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<(), BayesError> {
    let mut conc = Vec::new();
    for (g, grp) in model.groups.iter().enumerate() {
        conc.clear();
        conc.extend(
            grp.children
                .iter()
                .zip(&grp.alpha)
                .map(|(&c, &a)| a + state.counts[c] as f64),
        );
        state.branch_probs[g] = sample_dirichlet(&conc, rng)?.probabilities;
    }
    Ok(())
}

/// Cached per-group likelihood terms for incremental MH updates.
struct Terms {
    kernel: LatentKernel,
    groups: Vec<f64>,
    root: f64,
}

impl Terms {
    fn new(model: &BayesModel, kernel: LatentKernel, state: &LatentState) -> Self {
        Terms {
            kernel,
            groups: (0..model.groups.len())
                .map(|g| model.group_term(kernel, g, state))
                .collect(),
            root: model.root_prior().log_density(state.counts[0]),
        }
    }
}

/// One sweep of `±δ` random-walk proposals over the free latents, in model
/// order. Negative proposals are rejected outright.
pub fn mh_update_latent_counts(
    model: &BayesModel,
    state: &mut LatentState,
    rng: &mut RngStream,
    kernel: LatentKernel,
    steps: &mut [StepStats],
) {
    let mut terms = Terms::new(model, kernel, state);
    sweep(model, state, rng, &mut terms, steps);
}

fn shift_path(model: &BayesModel, state: &mut LatentState, node: usize, delta: i64) {
    let mut cur = Some(node);
    while let Some(i) = cur {
        state.counts[i] = state.counts[i].wrapping_add_signed(delta);
        cur = model.nodes[i].parent;
    }
}

fn sweep(
    model: &BayesModel,
    state: &mut LatentState,
    rng: &mut RngStream,
    terms: &mut Terms,
    steps: &mut [StepStats],
) {
    let mut fresh = Vec::new();
    for (k, &node) in model.free.iter().enumerate() {
        let h = steps[k].step_size;
        let r = rng.below(2 * h);
        let delta = if r < h {
            -((r + 1) as i64)
        } else {
            (r - h + 1) as i64
        };
        steps[k].proposed += 1;
        let old = state.latent_counts[k];
        if delta < 0 && delta.unsigned_abs() > old {
            continue;
        }
        shift_path(model, state, node, delta);
        fresh.clear();
        let mut diff = 0.0;
        for &g in &model.affected[k] {
            let t = model.group_term(terms.kernel, g, state);
            diff += t - terms.groups[g];
            fresh.push(t);
        }
        let root = model.root_prior().log_density(state.counts[0]);
        diff += root - terms.root;
        let accept = diff >= 0.0 || libm::log(rng.uniform_open()) < diff;
        if accept && !diff.is_nan() {
            state.latent_counts[k] = old.wrapping_add_signed(delta);
            for (&g, &t) in model.affected[k].iter().zip(&fresh) {
                terms.groups[g] = t;
            }
            terms.root = root;
            steps[k].accepted += 1;
        } else {
            shift_path(model, state, node, -delta);
        }
    }
}

fn default_steps(state: &LatentState) -> Vec<u64> {
    state
        .latent_counts
        .iter()
        .map(|&c| (libm::round(0.1 * c as f64) as u64).max(1))
        .collect()
}

fn retune(steps: &mut [StepStats]) {
    for s in steps.iter_mut() {
        let rate = s.acceptance_rate();
        let h = s.step_size;
        if rate < 0.2 {
            s.step_size = ((h as f64 * 0.6) as u64).max(1);
        } else if rate > 0.5 {
            s.step_size = ((h as f64 * 1.5) as u64).max(h + 1);
        }
        s.proposed = 0;
        s.accepted = 0;
    }
}

/// Run chain `chain` on stream `(config.seed, chain)`.
pub fn run_chain(
    model: &BayesModel,
    config: &ChainConfig,
    chain: usize,
) -> Result<ChainOutput, BayesError> {
    config.validate(model.free.len())?;
    let mut state = model.initial_state()?;
    let mut rng = RngStream::new(config.seed, chain as u64);
    let mut steps: Vec<StepStats> = config
        .step_sizes
        .clone()
        .unwrap_or_else(|| default_steps(&state))
        .into_iter()
        .map(|step_size| StepStats {
            step_size,
            ..Default::default()
        })
        .collect();
    let names = model.quantity_names();
    let mut traces: Vec<Vec<f64>> = names
        .iter()
        .map(|_| Vec::with_capacity(config.kept_per_chain()))
        .collect();

    let kernel = config.kernel;
    let mut terms = Terms::new(model, kernel, &state);
    for it in 0..config.iterations {
        if it == config.burn_in {
            for s in steps.iter_mut() {
                s.proposed = 0;
                s.accepted = 0;
            }
        }
        match kernel {
            LatentKernel::Collapsed => {
                sweep(model, &mut state, &mut rng, &mut terms, &mut steps);
                gibbs_update_branch_probs(model, &mut state, &mut rng)?;
            }
            LatentKernel::Conditional => {
                gibbs_update_branch_probs(model, &mut state, &mut rng)?;
                terms = Terms::new(model, kernel, &state);
                sweep(model, &mut state, &mut rng, &mut terms, &mut steps);
            }
        }
        if it < config.burn_in {
            if config.tune && (it + 1) % TUNING_WINDOW == 0 {
                retune(&mut steps);
            }
        } else if (it - config.burn_in) % config.thin == 0 {
            model.record(&state, &mut traces);
        }
    }
    Ok(ChainOutput {
        chain,
        traces,
        steps,
    })
}

/// Run all chains in order and summarize them.
pub fn run_chains(
    model: &BayesModel,
    config: &ChainConfig,
) -> Result<PosteriorSummary, BayesError> {
    let outputs = (0..config.chains)
        .map(|c| run_chain(model, config, c))
        .collect::<Result<Vec<_>, _>>()?;
    summarize(model, &outputs, config.keep_traces)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantitySummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub ess: f64,
    pub rhat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub quantities: Vec<QuantitySummary>,
    /// Chain-averaged autocorrelation to lag 50, per quantity.
    pub acf: Vec<Vec<f64>>,
    /// Per quantity, per chain thinned draws (when requested).
    pub traces: Option<Vec<Vec<Vec<f64>>>>,
    pub chains: usize,
    pub kept_per_chain: usize,
    /// Free latents with their final step size and post-burn-in acceptance
    /// rate, averaged over chains.
    pub acceptance: Vec<(String, u64, f64)>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&QuantitySummary> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn max_rhat(&self) -> f64 {
        self.quantities
            .iter()
            .map(|q| q.rhat)
            .filter(|r| !r.is_nan())
            .fold(1.0, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.quantities
            .iter()
            .map(|q| q.ess)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Pool chain outputs (ordered by chain index) into a summary.
pub fn summarize(
    model: &BayesModel,
    outputs: &[ChainOutput],
    keep_traces: bool,
) -> Result<PosteriorSummary, BayesError> {
    let names = model.quantity_names();
    let mut outputs: Vec<&ChainOutput> = outputs.iter().collect();
    outputs.sort_by_key(|o| o.chain);
    let kept = outputs
        .first()
        .map_or(0, |o| o.traces.first().map_or(0, Vec::len));
    let total = kept * outputs.len();
    if total < 100 {
        return Err(BayesError::TooFewSamples(total));
    }
    let mut quantities = Vec::with_capacity(names.len());
    let mut acf = Vec::with_capacity(names.len());
    for (q, name) in names.iter().enumerate() {
        let chains: Vec<Vec<f64>> = outputs.iter().map(|o| o.traces[q].clone()).collect();
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let sorted = stats::sorted(&pooled);
        quantities.push(QuantitySummary {
            name: name.clone(),
            mean: stats::mean(&pooled),
            sd: stats::sd(&pooled),
            q025: stats::quantile_sorted(&sorted, 0.025),
            median: stats::quantile_sorted(&sorted, 0.5),
            q975: stats::quantile_sorted(&sorted, 0.975),
            ess: diagnostics::ess(&chains),
            rhat: diagnostics::split_rhat(&chains),
        });
        let per_chain: Vec<Vec<f64>> = chains.iter().map(|c| diagnostics::acf(c, 50)).collect();
        let lags = per_chain.iter().map(Vec::len).min().unwrap_or(0);
        acf.push(
            (0..lags)
                .map(|l| per_chain.iter().map(|a| a[l]).sum::<f64>() / per_chain.len() as f64)
                .collect(),
        );
    }
    let acceptance = model
        .free_latents()
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let rates: Vec<f64> = outputs
                .iter()
                .map(|o| o.steps[k].acceptance_rate())
                .collect();
            let step = outputs
                .iter()
                .map(|o| o.steps[k].step_size)
                .max()
                .unwrap_or(0);
            (String::from(id.as_str()), step, stats::mean(&rates))
        })
        .collect();
    let traces = keep_traces.then(|| {
        (0..names.len())
            .map(|q| outputs.iter().map(|o| o.traces[q].clone()).collect())
            .collect()
    });
    Ok(PosteriorSummary {
        quantities,
        acf,
        traces,
        chains: outputs.len(),
        kept_per_chain: kept,
        acceptance,
    })
}
