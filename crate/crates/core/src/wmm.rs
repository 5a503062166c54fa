//! Weighted multiplier method.
//!
//! Each iteration samples every branch group once; all informed paths share
//! those draws and back-calculate the root size as `leaf / Π p`. The paths
//! are then combined with the sum-to-one weights `Σ⁻¹𝟙 / 𝟙ᵀΣ⁻¹𝟙` that
//! minimize the variance of the combination, `Σ` being the empirical
//! covariance of the path estimates across iterations.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{cholesky_solve, covariance, SymMatrix};
use crate::rng::RngStream;
use crate::samplers::{sample_sibling_group, SamplerError};
use crate::stats;
use crate::tree::{BranchSpec, EvidenceTree, NodeId, PathDescriptor, TreeError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmmConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Central mass of the reported intervals.
    pub interval_mass: f64,
}

impl Default for WmmConfig {
    fn default() -> Self {
        WmmConfig {
            iterations: 10_000,
            seed: 0,
            interval_mass: 0.95,
        }
    }
}

impl WmmConfig {
    pub fn new(iterations: usize, seed: u64) -> Self {
        WmmConfig {
            iterations,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WmmError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("tree has no informed leaves")]
    NoInformedLeaves,
    #[error("degenerate branch: probability {0} on a back-calculated path")]
    DegenerateBranch(f64),
    #[error("at least 2 iterations are required, got {0}")]
    TooFewIterations(usize),
    #[error("interval mass must lie in (0, 1), got {0}")]
    BadIntervalMass(f64),
    #[error("path covariance is singular after regularization")]
    SingularCovariance,
    #[error("path estimates are not finite")]
    NonFinite,
}

/// Implied root size of one path: `leaf_count / Π p`.
pub fn backcalculate_path(leaf_count: u64, branch_probabilities: &[f64]) -> Result<f64, WmmError> {
    let mut product = 1.0;
    for &p in branch_probabilities {
        if !(p > 0.0) {
            return Err(WmmError::DegenerateBranch(p));
        }
        product *= p;
    }
    Ok(leaf_count as f64 / product)
}

/// Result of [`fit_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub weights: Vec<f64>,
    /// Ridge added to the covariance diagonal (0 when the paths carry no
    /// variance and equal weights are used).
    pub ridge: f64,
}

/// Variance-minimizing sum-to-one weights for a row-major
/// `iterations x paths` matrix of estimates.
pub fn compute_weights(path_estimates: &[f64], paths: usize) -> Result<Vec<f64>, WmmError> {
    fit_weights(path_estimates, paths, None).map(|f| f.weights)
}

/// [`compute_weights`] with optional per-iteration importance weights.
///
/// The covariance is ridge-regularized by `ε·trace(Σ)/k` with `ε = 1e-10`,
/// escalating by 10 until the Cholesky factorization succeeds.
pub fn fit_weights(
    path_estimates: &[f64],
    paths: usize,
    importance: Option<&[f64]>,
) -> Result<WeightFit, WmmError> {
    if paths == 0 {
        return Err(WmmError::NoInformedLeaves);
    }
    let rows = path_estimates.len() / paths;
    if rows < 2 {
        return Err(WmmError::TooFewIterations(rows));
    }
    if paths == 1 {
        return Ok(WeightFit {
            weights: vec![1.0],
            ridge: 0.0,
        });
    }
    if path_estimates.iter().any(|v| !v.is_finite()) {
        return Err(WmmError::NonFinite);
    }
    let cov = covariance(path_estimates, paths, importance);
    let trace = cov.trace();
    if !trace.is_finite() {
        return Err(WmmError::NonFinite);
    }
    if trace == 0.0 {
        return Ok(WeightFit {
            weights: vec![1.0 / paths as f64; paths],
            ridge: 0.0,
        });
    }
    let scale = trace / paths as f64;
    let mut eps = 1e-10;
    while eps <= 1.0 {
        let mut reg = cov.clone();
        let ridge = eps * scale;
        for i in 0..paths {
            reg.set(i, i, reg.get(i, i) + ridge);
        }
        if let Some(l) = reg.cholesky() {
            let x = cholesky_solve(&l, paths, &vec![1.0; paths]);
            let total: f64 = x.iter().sum();
            if total.is_finite() && total != 0.0 {
                return Ok(WeightFit {
                    weights: x.iter().map(|v| v / total).collect(),
                    ridge,
                });
            }
        }
        eps *= 10.0;
    }
    Err(WmmError::SingularCovariance)
}

/// Empirical variance of `Σ wᵢ xᵢ` under the path covariance.
pub fn combination_variance(path_estimates: &[f64], paths: usize, weights: &[f64]) -> f64 {
    covariance_matrix(path_estimates, paths).quad_form(weights)
}

fn covariance_matrix(path_estimates: &[f64], paths: usize) -> SymMatrix {
    covariance(path_estimates, paths, None)
}

#[derive(Debug, Clone, PartialEq)]
struct PlanPath {
    leaf: NodeId,
    count: u64,
    /// `(group index, child position)` from the root down.
    steps: Vec<(usize, usize)>,
}

/// A tree compiled for repeated WMM iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmPlan {
    specs: Vec<BranchSpec>,
    paths: Vec<PlanPath>,
    /// Groups that lie on at least one informed path.
    used: Vec<bool>,
}

/// One Monte-Carlo iteration: the path estimates and the product of the
/// importance weights of the groups they use.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationDraw {
    pub estimates: Vec<f64>,
    pub weight: f64,
}

impl WmmPlan {
    pub fn new(tree: &EvidenceTree) -> Result<Self, WmmError> {
        let violations = tree.validate();
        if !violations.is_empty() {
            return Err(TreeError::Invalid(violations).into());
        }
        let informed = tree.informed_leaves();
        if informed.is_empty() {
            return Err(WmmError::NoInformedLeaves);
        }
        let specs: Vec<BranchSpec> = tree.branch_groups.iter().map(|g| g.spec.clone()).collect();
        let mut used = vec![false; specs.len()];
        let paths = informed
            .iter()
            .map(|p| compile_path(tree, p, &mut used))
            .collect();
        Ok(WmmPlan { specs, paths, used })
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.paths.iter().map(|p| p.leaf.clone()).collect()
    }

    pub fn leaf_counts(&self) -> Vec<u64> {
        self.paths.iter().map(|p| p.count).collect()
    }

    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    /// Iteration `iteration` draws from its own stream `(seed, iteration)`,
    /// so any partition of iterations over workers gives the same numbers.
    pub fn sample_iteration(&self, seed: u64, iteration: u64) -> Result<IterationDraw, WmmError> {
        let mut rng = RngStream::new(seed, iteration);
        let mut samples = Vec::with_capacity(self.specs.len());
        let mut weight = 1.0;
        for (spec, &used) in self.specs.iter().zip(&self.used) {
            let s = sample_sibling_group(spec, &mut rng)?;
            if used {
                weight *= s.importance_weight;
            }
            samples.push(s.probabilities);
        }
        let mut probs = Vec::new();
        let estimates = self
            .paths
            .iter()
            .map(|path| {
                probs.clear();
                probs.extend(path.steps.iter().map(|&(g, pos)| samples[g][pos]));
                backcalculate_path(path.count, &probs)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IterationDraw { estimates, weight })
    }

    /// Fit weights and summarize draws ordered by iteration index.
    pub fn finish(
        &self,
        draws: Vec<IterationDraw>,
        config: &WmmConfig,
    ) -> Result<WmmRun, WmmError> {
        check_config(config)?;
        let k = self.paths.len();
        let iterations = draws.len();
        if iterations < 2 {
            return Err(WmmError::TooFewIterations(iterations));
        }
        let mut path_estimates = Vec::with_capacity(iterations * k);
        let mut importance = Vec::with_capacity(iterations);
        for d in draws {
            path_estimates.extend(d.estimates);
            importance.push(d.weight);
        }
        let weighted = importance.iter().any(|&w| w != 1.0);
        let fit = fit_weights(&path_estimates, k, weighted.then_some(&importance[..]))?;
        let combined_samples: Vec<f64> = path_estimates
            .chunks_exact(k)
            .map(|row| combine(row, &fit.weights))
            .collect();

        let alpha = (1.0 - config.interval_mass) / 2.0;
        let (mean, sd, median, lo, hi) = if weighted {
            (
                stats::weighted_mean(&combined_samples, &importance),
                libm::sqrt(stats::weighted_variance(&combined_samples, &importance)),
                stats::weighted_quantile(&combined_samples, &importance, 0.5),
                stats::weighted_quantile(&combined_samples, &importance, alpha),
                stats::weighted_quantile(&combined_samples, &importance, 1.0 - alpha),
            )
        } else {
            let sorted = stats::sorted(&combined_samples);
            (
                stats::mean(&combined_samples),
                stats::sd(&combined_samples),
                stats::quantile_sorted(&sorted, 0.5),
                stats::quantile_sorted(&sorted, alpha),
                stats::quantile_sorted(&sorted, 1.0 - alpha),
            )
        };
        let z = stats::normal_quantile(1.0 - alpha);
        let half = z * sd / libm::sqrt(iterations as f64);

        Ok(WmmRun {
            leaves: self.leaves(),
            leaf_counts: self.leaf_counts(),
            iterations,
            path_estimates,
            importance,
            weights: fit.weights,
            ridge: fit.ridge,
            combined_samples,
            mean,
            sd,
            median,
            quantile_interval: (lo, hi),
            normal_interval: (mean - half, mean + half),
            interval_mass: config.interval_mass,
            seed: config.seed,
        })
    }
}

fn combine(row: &[f64], weights: &[f64]) -> f64 {
    row.iter().zip(weights).map(|(x, w)| w * x).sum()
}

fn compile_path(tree: &EvidenceTree, path: &PathDescriptor, used: &mut [bool]) -> PlanPath {
    let steps = path
        .edges
        .iter()
        .map(|(parent, child)| {
            let g = tree
                .branch_groups
                .iter()
                .position(|g| &g.parent == parent)
                .expect("informed path edges have groups");
            used[g] = true;
            let pos = tree.branch_groups[g]
                .position(child)
                .expect("child listed in its parent's group");
            (g, pos)
        })
        .collect();
    PlanPath {
        leaf: path.leaf.clone(),
        count: tree
            .node(&path.leaf)
            .and_then(|n| n.observed_count)
            .expect("informed leaves are observed"),
        steps,
    }
}

fn check_config(config: &WmmConfig) -> Result<(), WmmError> {
    if config.iterations < 2 {
        return Err(WmmError::TooFewIterations(config.iterations));
    }
    if !(config.interval_mass > 0.0 && config.interval_mass < 1.0) {
        return Err(WmmError::BadIntervalMass(config.interval_mass));
    }
    Ok(())
}

/// Output of one WMM run.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmRun {
    /// Informed leaves, one per path, in tree preorder.
    pub leaves: Vec<NodeId>,
    pub leaf_counts: Vec<u64>,
    pub iterations: usize,
    /// Row-major `iterations x paths`.
    pub path_estimates: Vec<f64>,
    /// Per-iteration importance weights (all 1 for exact sampling schemes).
    pub importance: Vec<f64>,
    pub weights: Vec<f64>,
    pub ridge: f64,
    /// `combined_samples[m] = Σᵢ weights[i] · path_estimates[m][i]`.
    pub combined_samples: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub quantile_interval: (f64, f64),
    /// `mean ± z · sd / √iterations`.
    pub normal_interval: (f64, f64),
    pub interval_mass: f64,
    pub seed: u64,
}

impl WmmRun {
    pub fn path_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn path_estimate(&self, iteration: usize, path: usize) -> f64 {
        self.path_estimates[iteration * self.path_count() + path]
    }

    pub fn path_column(&self, path: usize) -> Vec<f64> {
        let k = self.path_count();
        self.path_estimates
            .iter()
            .skip(path)
            .step_by(k)
            .copied()
            .collect()
    }
}

/// Run the whole method on one thread.
pub fn run_wmm(tree: &EvidenceTree, config: &WmmConfig) -> Result<WmmRun, WmmError> {
    check_config(config)?;
    let plan = WmmPlan::new(tree)?;
    let draws = (0..config.iterations as u64)
        .map(|m| plan.sample_iteration(config.seed, m))
        .collect::<Result<Vec<_>, _>>()?;
    plan.finish(draws, config)
}

/// Path weights keyed by leaf, in the tree's preorder.
pub fn path_weight_report(run: &WmmRun, tree: &EvidenceTree) -> Vec<(NodeId, f64)> {
    let order = tree.preorder();
    let mut rows: Vec<(usize, NodeId, f64)> = run
        .leaves
        .iter()
        .zip(&run.weights)
        .map(|(leaf, &w)| {
            let pos = order
                .iter()
                .position(|id| *id == leaf)
                .unwrap_or(usize::MAX);
            (pos, leaf.clone(), w)
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    rows.into_iter().map(|(_, id, w)| (id, w)).collect()
}
