//! Root population size estimation from tree-structured relational evidence.
//!
//! A hidden population sits at the root of an [`EvidenceTree`]; leaves carry
//! observed event counts and each internal node owns a branch group whose
//! outgoing probabilities lie on a simplex. Two estimators are provided:
//!
//! * [`wmm`]: the weighted multiplier method. Every informed root-to-leaf path
//!   back-calculates the root size by Monte-Carlo, and the paths are combined
//!   through sum-to-one, variance-minimizing weights.
//! * [`bayes`]: a Dirichlet-multinomial tree model with data-uncertainty leaves,
//!   sampled with Metropolis-within-Gibbs and summarized with standard MCMC
//!   diagnostics.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! parallel drivers live in the `treepop` crate.

#![no_std]
// Negated float comparisons deliberately treat NaN as failing the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bayes;
pub mod canonical;
pub mod diagnostics;
mod linalg;
pub mod rng;
pub mod samplers;
pub mod stats;
pub mod tree;
pub mod wmm;

pub use bayes::{
    BayesError, BayesModel, BayesPriors, ChainConfig, GroupPrior, LatentKernel, LatentState,
    PosteriorSummary, RootPrior,
};
pub use rng::RngStream;
pub use samplers::{BranchSample, SamplerError};
pub use tree::{
    Aggregation, BranchGroup, BranchSpec, EvidenceTree, NodeId, NodeRecord, PathDescriptor, Role,
    Survey, TreeError, Violation,
};
pub use wmm::{WmmConfig, WmmError, WmmRun};
