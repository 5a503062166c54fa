use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{BayesError, BayesPriors, LatentKernel, RootPrior};
use crate::stats::{ln_gamma, xlogy};
use crate::tree::{BranchSpec, EvidenceTree, NodeId, NodeRecord, Role, TreeError};

#[derive(Debug, Clone, PartialEq)]
pub(super) struct ModelNode {
    pub id: NodeId,
    pub parent: Option<usize>,
    /// Branch group owned by this node.
    pub group: Option<usize>,
    /// `(group, position)` of this node among its siblings.
    pub slot: Option<(usize, usize)>,
    pub observed: Option<u64>,
    /// Index into the free latents.
    pub free: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(super) struct ModelGroup {
    pub name: String,
    pub parent: usize,
    pub children: Vec<usize>,
    pub alpha: Vec<f64>,
    pub alpha_sum: f64,
    /// `lgamma(Σα) - Σ lgamma(α)`.
    pub ln_norm: f64,
}

/// A tree compiled against its priors.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesModel {
    tree: EvidenceTree,
    root_prior: RootPrior,
    pub(super) nodes: Vec<ModelNode>,
    pub(super) groups: Vec<ModelGroup>,
    /// Node index of each free latent.
    pub(super) free: Vec<usize>,
    /// Groups whose likelihood term depends on each free latent.
    pub(super) affected: Vec<Vec<usize>>,
}

/// Chain state: free latent counts, branch probabilities per group and the
/// derived count of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub latent_counts: Vec<u64>,
    pub branch_probs: Vec<Vec<f64>>,
    pub(super) counts: Vec<u64>,
}

impl LatentState {
    /// Counts of all nodes in model order.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

impl BayesModel {
    /// Attach uncertainty leaves and index the tree for sampling.
    pub fn build(tree: &EvidenceTree, priors: &BayesPriors) -> Result<BayesModel, BayesError> {
        let violations = tree.validate();
        if !violations.is_empty() {
            return Err(TreeError::Invalid(violations).into());
        }
        priors.root.validate()?;

        let mut by_parent = BTreeMap::new();
        for p in &priors.groups {
            if tree.group(&p.parent).is_none() {
                return Err(BayesError::UnknownGroup(p.parent.clone()));
            }
            if by_parent.insert(p.parent.clone(), p).is_some() {
                return Err(BayesError::DuplicatePrior(p.parent.clone()));
            }
        }

        let mut augmented = tree.clone();
        let mut names = BTreeMap::new();
        for g in &mut augmented.branch_groups {
            let prior = by_parent
                .get(&g.parent)
                .ok_or_else(|| BayesError::MissingPrior(g.parent.clone()))?;
            let name = prior
                .name
                .clone()
                .unwrap_or_else(|| format!("p_{}", g.parent));
            if prior
                .concentration
                .iter()
                .any(|&a| !(a > 0.0 && a.is_finite()))
            {
                return Err(BayesError::BadConcentration(name));
            }
            let k = g.children.len();
            let found = prior.concentration.len();
            if found == k + 1 {
                let label = prior
                    .uncertainty
                    .clone()
                    .unwrap_or_else(|| NodeId::new(format!("{}_u", g.parent)));
                if tree.node(&label).is_some() || augmented.edges.iter().any(|(c, _)| *c == label) {
                    return Err(BayesError::UncertaintyClash(label));
                }
                augmented.edges.push((label.clone(), g.parent.clone()));
                g.children.push(label);
            } else if found != k || prior.uncertainty.is_some() {
                return Err(BayesError::DimensionMismatch {
                    group: name,
                    children: k,
                    found,
                });
            }
            g.spec = BranchSpec::DirichletPrior {
                concentration: prior.concentration.clone(),
            };
            names.insert(g.parent.clone(), name);
        }
        let new_leaves: Vec<NodeId> = augmented
            .branch_groups
            .iter()
            .filter_map(|g| {
                let last = g.children.last()?;
                tree.node(last).is_none().then(|| last.clone())
            })
            .collect();
        for id in new_leaves {
            augmented
                .nodes
                .push(NodeRecord::new(id, Role::UncertaintyLeaf));
        }
        let violations = augmented.validate();
        if !violations.is_empty() {
            return Err(TreeError::Invalid(violations).into());
        }

        let order: Vec<NodeId> = augmented.preorder().into_iter().cloned().collect();
        let index: BTreeMap<&NodeId, usize> =
            order.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let mut nodes: Vec<ModelNode> = order
            .iter()
            .map(|id| ModelNode {
                id: id.clone(),
                parent: augmented.parent(id).map(|p| index[p]),
                group: None,
                slot: None,
                observed: augmented.node(id).and_then(|n| n.observed_count),
                free: None,
            })
            .collect();

        let mut groups = Vec::new();
        for id in &order {
            let Some(g) = augmented.group(id) else {
                continue;
            };
            let BranchSpec::DirichletPrior { concentration } = &g.spec else {
                unreachable!("every group was given its prior")
            };
            let gi = groups.len();
            let children: Vec<usize> = g.children.iter().map(|c| index[c]).collect();
            for (pos, &c) in children.iter().enumerate() {
                nodes[c].slot = Some((gi, pos));
            }
            nodes[index[id]].group = Some(gi);
            let alpha_sum: f64 = concentration.iter().sum();
            groups.push(ModelGroup {
                name: names[id].clone(),
                parent: index[id],
                children,
                alpha: concentration.clone(),
                alpha_sum,
                ln_norm: ln_gamma(alpha_sum)
                    - concentration.iter().map(|&a| ln_gamma(a)).sum::<f64>(),
            });
        }

        let mut free = Vec::new();
        for (i, n) in nodes.iter_mut().enumerate() {
            if n.group.is_none() && n.observed.is_none() {
                n.free = Some(free.len());
                free.push(i);
            }
        }
        let affected = free
            .iter()
            .map(|&i| {
                let mut out = Vec::new();
                let mut cur = i;
                while let Some((g, _)) = nodes[cur].slot {
                    out.push(g);
                    cur = groups[g].parent;
                }
                out
            })
            .collect();

        Ok(BayesModel {
            tree: augmented,
            root_prior: priors.root,
            nodes,
            groups,
            free,
            affected,
        })
    }

    /// The tree with uncertainty leaves attached.
    pub fn tree(&self) -> &EvidenceTree {
        &self.tree
    }

    pub fn root_prior(&self) -> &RootPrior {
        &self.root_prior
    }

    /// Node ids in model order (preorder of the augmented tree).
    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    pub fn node_index(&self, id: &NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == *id)
    }

    pub fn free_latents(&self) -> Vec<NodeId> {
        self.free
            .iter()
            .map(|&i| self.nodes[i].id.clone())
            .collect()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_name(&self, group: usize) -> &str {
        &self.groups[group].name
    }

    pub fn group_parent(&self, group: usize) -> &NodeId {
        &self.nodes[self.groups[group].parent].id
    }

    pub fn group_children(&self, group: usize) -> Vec<NodeId> {
        self.groups[group]
            .children
            .iter()
            .map(|&c| self.nodes[c].id.clone())
            .collect()
    }

    pub fn group_concentration(&self, group: usize) -> &[f64] {
        &self.groups[group].alpha
    }

    /// Count of node `id` in `state`.
    pub fn count(&self, state: &LatentState, id: &NodeId) -> Option<u64> {
        self.node_index(id).map(|i| state.counts[i])
    }

    /// Build a state from latent counts and branch probabilities, deriving
    /// every internal count bottom-up.
    pub fn state(
        &self,
        latent_counts: Vec<u64>,
        branch_probs: Vec<Vec<f64>>,
    ) -> Result<LatentState, BayesError> {
        if latent_counts.len() != self.free.len()
            || branch_probs.len() != self.groups.len()
            || branch_probs
                .iter()
                .zip(&self.groups)
                .any(|(p, g)| p.len() != g.children.len())
        {
            return Err(BayesError::StateMismatch);
        }
        let counts = self.derive_counts(&latent_counts);
        Ok(LatentState {
            latent_counts,
            branch_probs,
            counts,
        })
    }

    pub(super) fn derive_counts(&self, latent: &[u64]) -> Vec<u64> {
        let mut counts = vec![0u64; self.nodes.len()];
        for i in (0..self.nodes.len()).rev() {
            let n = &self.nodes[i];
            counts[i] = match (n.group, n.observed, n.free) {
                (Some(g), _, _) => self.groups[g].children.iter().map(|&c| counts[c]).sum(),
                (None, Some(x), _) => x,
                (None, None, Some(f)) => latent[f],
                (None, None, None) => 0,
            };
        }
        counts
    }

    pub(super) fn root_index(&self) -> usize {
        0
    }

    /// Dirichlet-multinomial log pmf of group `g`'s child counts.
    pub(super) fn group_log_marginal(&self, g: usize, counts: &[u64]) -> f64 {
        let grp = &self.groups[g];
        let total = counts[grp.parent] as f64;
        let mut s = ln_gamma(total + 1.0) + grp.ln_norm - ln_gamma(total + grp.alpha_sum);
        for (&c, &a) in grp.children.iter().zip(&grp.alpha) {
            let n = counts[c] as f64;
            s += ln_gamma(n + a) - ln_gamma(n + 1.0);
        }
        s
    }

    /// Multinomial log pmf of group `g`'s child counts given `probs`.
    pub(super) fn group_log_likelihood(&self, g: usize, counts: &[u64], probs: &[f64]) -> f64 {
        let grp = &self.groups[g];
        let mut s = ln_gamma(counts[grp.parent] as f64 + 1.0);
        for (&c, &p) in grp.children.iter().zip(probs) {
            let n = counts[c] as f64;
            s += xlogy(n, p) - ln_gamma(n + 1.0);
        }
        s
    }

    /// Dirichlet prior log density of group `g`'s probabilities.
    pub(super) fn group_log_prior(&self, g: usize, probs: &[f64]) -> f64 {
        let grp = &self.groups[g];
        grp.ln_norm
            + probs
                .iter()
                .zip(&grp.alpha)
                .map(|(&p, &a)| xlogy(a - 1.0, p))
                .sum::<f64>()
    }

    /// Likelihood term of group `g` used by `kernel`.
    pub(super) fn group_term(&self, kernel: LatentKernel, g: usize, state: &LatentState) -> f64 {
        match kernel {
            LatentKernel::Collapsed => self.group_log_marginal(g, &state.counts),
            LatentKernel::Conditional => {
                self.group_log_likelihood(g, &state.counts, &state.branch_probs[g])
            }
        }
    }

    /// Root prior at `Z` plus, per group, the Dirichlet prior density of the
    /// branch probabilities and the multinomial likelihood of the child
    /// counts. `-inf` for impossible states.
    pub fn log_posterior(&self, state: &LatentState) -> f64 {
        let mut s = self.root_prior.log_density(state.counts[self.root_index()]);
        for g in 0..self.groups.len() {
            let p = &state.branch_probs[g];
            s += self.group_log_prior(g, p) + self.group_log_likelihood(g, &state.counts, p);
        }
        if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            s
        }
    }

    /// Log posterior of the counts alone, branch probabilities integrated out.
    pub fn log_marginal(&self, state: &LatentState) -> f64 {
        let mut s = self.root_prior.log_density(state.counts[self.root_index()]);
        for g in 0..self.groups.len() {
            s += self.group_log_marginal(g, &state.counts);
        }
        s
    }

    /// Starting state inside the typical set.
    ///
    /// Working upward, each latent child of a group that has some resolved
    /// children gets `round(α_i / Σα_known · Σn_known)`; for an uncertainty
    /// leaf this is `f / (1 - f)` times its observed siblings, `f` being its
    /// prior mean share. Subtrees without data inherit prior-mean shares of
    /// their parent, and a root without data starts at the root prior's
    /// typical value. Branch probabilities start at their conditional means.
    pub fn initial_state(&self) -> Result<LatentState, BayesError> {
        let mut latent = vec![0u64; self.free.len()];
        let root = self.root_index();
        if self.resolve(root, &mut latent).is_none() {
            self.assign(root, self.root_prior.typical(), &mut latent);
        }
        self.fit_root_bounds(&mut latent);
        let counts = self.derive_counts(&latent);
        let branch_probs = self
            .groups
            .iter()
            .map(|g| {
                let n: f64 = g.children.iter().map(|&c| counts[c] as f64).sum();
                g.children
                    .iter()
                    .zip(&g.alpha)
                    .map(|(&c, &a)| (a + counts[c] as f64) / (g.alpha_sum + n))
                    .collect()
            })
            .collect();
        let state = LatentState {
            latent_counts: latent,
            branch_probs,
            counts,
        };
        if !self.log_posterior(&state).is_finite() {
            return Err(BayesError::InvalidInitialization);
        }
        Ok(state)
    }

    fn resolve(&self, node: usize, latent: &mut [u64]) -> Option<u64> {
        let n = &self.nodes[node];
        let Some(g) = n.group else {
            return n.observed;
        };
        let grp = &self.groups[g];
        let resolved: Vec<Option<u64>> = grp
            .children
            .iter()
            .map(|&c| self.resolve(c, latent))
            .collect();
        let (mut known_n, mut known_a) = (0u64, 0.0);
        for (r, &a) in resolved.iter().zip(&grp.alpha) {
            if let Some(v) = r {
                known_n += v;
                known_a += a;
            }
        }
        if known_a == 0.0 {
            return None;
        }
        let mut total = known_n;
        for ((r, &c), &a) in resolved.iter().zip(&grp.children).zip(&grp.alpha) {
            if r.is_none() {
                let v = libm::round(a / known_a * known_n as f64) as u64;
                self.assign(c, v, latent);
                total += v;
            }
        }
        Some(total)
    }

    fn assign(&self, node: usize, value: u64, latent: &mut [u64]) {
        let n = &self.nodes[node];
        if let Some(f) = n.free {
            latent[f] = value;
        } else if let Some(g) = n.group {
            let grp = &self.groups[g];
            for (&c, &a) in grp.children.iter().zip(&grp.alpha) {
                self.assign(
                    c,
                    libm::round(value as f64 * a / grp.alpha_sum) as u64,
                    latent,
                );
            }
        }
    }

    /// Move latent mass so the root starts inside uniform prior bounds.
    fn fit_root_bounds(&self, latent: &mut [u64]) {
        let RootPrior::Uniform { lower, upper } = self.root_prior else {
            return;
        };
        let z: u64 = self.derive_counts(latent)[self.root_index()];
        if z < lower {
            if let Some(first) = latent.first_mut() {
                *first += lower - z;
            }
        } else if z > upper {
            let mut excess = z - upper;
            for v in latent.iter_mut() {
                let cut = excess.min(*v);
                *v -= cut;
                excess -= cut;
            }
        }
    }
}
