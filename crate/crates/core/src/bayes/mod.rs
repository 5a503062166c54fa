//! Dirichlet-multinomial tree model with data-uncertainty leaves.
//!
//! Each branch group carries a Dirichlet prior on its outgoing probabilities
//! and a multinomial likelihood for its children's counts given the parent's
//! count. A prior one component longer than the group gains an uncertainty
//! leaf: a latent child counting events that no data source saw. Leaves
//! without data and uncertainty leaves are the free latent integers; every
//! internal count is their sum with the observed leaves below it.
//!
//! The default kernel integrates the branch probabilities out when updating
//! the latent counts (a Dirichlet-multinomial marginal), then redraws the
//! probabilities from their conjugate conditional. The conditional kernel
//! updates counts given the current probabilities instead; it targets the
//! same posterior but mixes slowly when a latent count and a branch
//! probability are strongly coupled.

mod chain;
mod model;

use alloc::string::String;
use alloc::vec::Vec;

use crate::samplers::SamplerError;
use crate::stats;
use crate::tree::{NodeId, TreeError};

pub use chain::{
    gibbs_update_branch_probs, mh_update_latent_counts, run_chain, run_chains, summarize,
    ChainConfig, ChainOutput, PosteriorSummary, QuantitySummary, StepStats,
};
pub use model::{BayesModel, LatentState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BayesError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("prior for group {group} has dimension {found}; the group has {children} children")]
    DimensionMismatch {
        group: String,
        children: usize,
        found: usize,
    },
    #[error("no prior for branch group {0}")]
    MissingPrior(NodeId),
    #[error("more than one prior for branch group {0}")]
    DuplicatePrior(NodeId),
    #[error("prior names unknown branch group {0}")]
    UnknownGroup(NodeId),
    #[error("uncertainty leaf {0} clashes with an existing node")]
    UncertaintyClash(NodeId),
    #[error("invalid concentration in prior for group {0}")]
    BadConcentration(String),
    #[error("invalid root prior: {0}")]
    BadRootPrior(&'static str),
    #[error("invalid chain configuration: {0}")]
    BadConfig(&'static str),
    #[error("invalid initialization")]
    InvalidInitialization,
    #[error("state does not match the model")]
    StateMismatch,
    #[error("too few kept samples for diagnostics: {0} (need at least 100)")]
    TooFewSamples(usize),
}

/// Prior on the integer root count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootPrior {
    /// Lognormal density evaluated at integer values.
    LogNormal { log_mean: f64, log_sd: f64 },
    /// Discrete uniform on `lower..=upper`.
    Uniform { lower: u64, upper: u64 },
}

impl RootPrior {
    pub fn validate(&self) -> Result<(), BayesError> {
        match *self {
            RootPrior::LogNormal { log_mean, log_sd } => {
                if !log_mean.is_finite() {
                    return Err(BayesError::BadRootPrior("log_mean must be finite"));
                }
                if !(log_sd > 0.0 && log_sd.is_finite()) {
                    return Err(BayesError::BadRootPrior("log_sd must be positive"));
                }
            }
            RootPrior::Uniform { lower, upper } => {
                if lower >= upper {
                    return Err(BayesError::BadRootPrior("lower must be below upper"));
                }
            }
        }
        Ok(())
    }

    /// Log prior mass (up to a constant for the lognormal) at integer `z`.
    pub fn log_density(&self, z: u64) -> f64 {
        match *self {
            RootPrior::LogNormal { log_mean, log_sd } => {
                if z == 0 {
                    return f64::NEG_INFINITY;
                }
                let lz = libm::log(z as f64);
                let d = (lz - log_mean) / log_sd;
                -lz - libm::log(log_sd) - 0.5 * libm::log(2.0 * core::f64::consts::PI) - 0.5 * d * d
            }
            RootPrior::Uniform { lower, upper } => {
                if (lower..=upper).contains(&z) {
                    -libm::log((upper - lower + 1) as f64)
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            RootPrior::LogNormal { log_mean, log_sd } => {
                libm::exp(log_mean + 0.5 * log_sd * log_sd)
            }
            RootPrior::Uniform { lower, upper } => (lower as f64 + upper as f64) / 2.0,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            RootPrior::LogNormal { log_sd, .. } => {
                self.mean() * libm::sqrt(libm::expm1(log_sd * log_sd))
            }
            RootPrior::Uniform { lower, upper } => {
                let w = (upper - lower + 1) as f64;
                libm::sqrt((w * w - 1.0) / 12.0)
            }
        }
    }

    /// Starting value for the root when no data constrains it.
    pub fn typical(&self) -> u64 {
        match *self {
            RootPrior::LogNormal { log_mean, .. } => libm::round(libm::exp(log_mean)) as u64,
            RootPrior::Uniform { lower, upper } => lower + (upper - lower) / 2,
        }
    }

    /// Lognormal centred (in log space) on `center` that puts `mass` on
    /// `[lower, upper]`.
    pub fn lognormal_from_bounds(
        lower: f64,
        upper: f64,
        center: f64,
        mass: f64,
    ) -> Result<RootPrior, BayesError> {
        if !(lower > 0.0 && lower < center && center < upper && upper.is_finite()) {
            return Err(BayesError::BadRootPrior("need 0 < lower < center < upper"));
        }
        if !(mass > 0.0 && mass < 1.0) {
            return Err(BayesError::BadRootPrior("mass must lie in (0, 1)"));
        }
        let mu = libm::log(center);
        let (ll, lu) = (libm::log(lower), libm::log(upper));
        let covered = |s: f64| stats::normal_cdf((lu - mu) / s) - stats::normal_cdf((ll - mu) / s);
        // Coverage falls monotonically in the scale.
        let (mut lo, mut hi) = (1e-9, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if covered(mid) > mass {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(RootPrior::LogNormal {
            log_mean: mu,
            log_sd: 0.5 * (lo + hi),
        })
    }
}

/// Dirichlet prior on one branch group, listed in the group's child order
/// with the uncertainty component (if any) last.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrior {
    /// Label used in quantity names (`{name}_{child}`).
    pub name: Option<String>,
    pub parent: NodeId,
    pub concentration: Vec<f64>,
    /// Label of the uncertainty leaf attached when the concentration has one
    /// more component than the group has children (default `{parent}_u`).
    pub uncertainty: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesPriors {
    pub root: RootPrior,
    pub groups: Vec<GroupPrior>,
}

/// How the latent counts are updated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LatentKernel {
    /// Branch probabilities integrated out during count updates.
    #[default]
    Collapsed,
    /// Count updates conditional on the current branch probabilities.
    Conditional,
}
