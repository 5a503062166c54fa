//! Evidence-tree data model, validation and structural transforms.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Short unique node label, e.g. `"Z"` or `"K"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(label: impl Into<String>) -> Self {
        NodeId(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

impl AsRef<str> for NodeId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Root,
    Internal,
    Leaf,
    /// Artificial latent sibling for events missed by every data source.
    UncertaintyLeaf,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Root => "root",
            Role::Internal => "internal",
            Role::Leaf => "leaf",
            Role::UncertaintyLeaf => "uncertainty-leaf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub role: Role,
    pub observed_count: Option<u64>,
    pub description: String,
}

impl NodeRecord {
    pub fn new(id: impl Into<NodeId>, role: Role) -> Self {
        NodeRecord {
            id: id.into(),
            role,
            observed_count: None,
            description: String::new(),
        }
    }

    pub fn with_count(mut self, count: u64) -> Self {
        self.observed_count = Some(count);
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }
}

/// One survey informing one child: `x` of `n` sampled individuals went there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Survey {
    pub x: u64,
    pub n: u64,
}

/// How the outgoing probabilities of one parent are sampled.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchSpec {
    /// One survey of size `total` informs every child.
    DirichletSurvey {
        counts: Vec<u64>,
        total: u64,
    },
    /// Independent surveys per child; `None` marks an uninformed child.
    BetaSurveyPerChild {
        surveys: Vec<Option<Survey>>,
    },
    DirichletPrior {
        concentration: Vec<f64>,
    },
    Fixed {
        probabilities: Vec<f64>,
    },
}

impl BranchSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BranchSpec::DirichletSurvey { .. } => "dirichlet_survey",
            BranchSpec::BetaSurveyPerChild { .. } => "beta_survey",
            BranchSpec::DirichletPrior { .. } => "dirichlet_prior",
            BranchSpec::Fixed { .. } => "fixed",
        }
    }

    /// Number of children the spec describes.
    pub fn dimension(&self) -> usize {
        match self {
            BranchSpec::DirichletSurvey { counts, .. } => counts.len(),
            BranchSpec::BetaSurveyPerChild { surveys } => surveys.len(),
            BranchSpec::DirichletPrior { concentration } => concentration.len(),
            BranchSpec::Fixed { probabilities } => probabilities.len(),
        }
    }

    /// Whether the edge to the child at `position` yields usable samples.
    pub fn position_informed(&self, position: usize) -> bool {
        match self {
            BranchSpec::BetaSurveyPerChild { surveys } => {
                surveys.get(position).is_some_and(Option::is_some)
            }
            _ => position < self.dimension(),
        }
    }

    pub fn is_survey_informed(&self) -> bool {
        matches!(
            self,
            BranchSpec::DirichletSurvey { .. } | BranchSpec::BetaSurveyPerChild { .. }
        )
    }

    /// Uniform prior over `k` children.
    pub fn uniform(k: usize) -> Self {
        BranchSpec::DirichletPrior {
            concentration: vec![1.0; k],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchGroup {
    pub parent: NodeId,
    pub children: Vec<NodeId>,
    pub spec: BranchSpec,
}

impl BranchGroup {
    pub fn new(parent: impl Into<NodeId>, children: &[&str], spec: BranchSpec) -> Self {
        BranchGroup {
            parent: parent.into(),
            children: children.iter().map(|&c| NodeId::from(c)).collect(),
            spec,
        }
    }

    pub fn position(&self, child: &NodeId) -> Option<usize> {
        self.children.iter().position(|c| c == child)
    }
}

/// Root-to-leaf path of an informed leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathDescriptor {
    pub leaf: NodeId,
    /// `(parent, child)` pairs, first parent is the root.
    pub edges: Vec<(NodeId, NodeId)>,
}

/// An invariant violation found by [`EvidenceTree::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyNodeId,
    DuplicateNode(NodeId),
    NoRoot,
    MultipleRoots(Vec<NodeId>),
    UnknownNodeInEdge {
        child: NodeId,
        parent: NodeId,
    },
    SelfLoop(NodeId),
    DuplicateParent(NodeId),
    RootHasParent(NodeId),
    MissingParent(NodeId),
    Unreachable(NodeId),
    CountOnNonLeaf(NodeId),
    LeafWithChildren(NodeId),
    InternalWithoutChildren(NodeId),
    MissingBranchGroup(NodeId),
    DuplicateBranchGroup(NodeId),
    UnknownGroupParent(NodeId),
    GroupChildrenMismatch(NodeId),
    SpecDimension {
        parent: NodeId,
        expected: usize,
        found: usize,
    },
    SurveyCountsExceedTotal(NodeId),
    SurveyExceedsSize {
        parent: NodeId,
        child: NodeId,
    },
    NonPositiveConcentration(NodeId),
    FixedNotOnSimplex(NodeId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyNodeId => write!(f, "empty node id"),
            Violation::DuplicateNode(id) => write!(f, "duplicate node id {id}"),
            Violation::NoRoot => write!(f, "no root"),
            Violation::MultipleRoots(ids) => {
                write!(f, "multiple roots:")?;
                for id in ids {
                    write!(f, " {id}")?;
                }
                Ok(())
            }
            Violation::UnknownNodeInEdge { child, parent } => {
                write!(f, "edge {child} -> {parent} references an unknown node")
            }
            Violation::SelfLoop(id) => write!(f, "node {id} is its own parent"),
            Violation::DuplicateParent(id) => write!(f, "node {id} has more than one parent"),
            Violation::RootHasParent(id) => write!(f, "root {id} has a parent"),
            Violation::MissingParent(id) => write!(f, "non-root node {id} has no parent"),
            Violation::Unreachable(id) => write!(f, "node {id} is not reachable from the root"),
            Violation::CountOnNonLeaf(id) => {
                write!(f, "node {id} carries an observed count but is not a leaf")
            }
            Violation::LeafWithChildren(id) => write!(f, "leaf {id} has children"),
            Violation::InternalWithoutChildren(id) => {
                write!(f, "internal node {id} has no children")
            }
            Violation::MissingBranchGroup(id) => write!(f, "node {id} has no branch group"),
            Violation::DuplicateBranchGroup(id) => {
                write!(f, "node {id} has more than one branch group")
            }
            Violation::UnknownGroupParent(id) => {
                write!(f, "branch group parent {id} is not an internal node")
            }
            Violation::GroupChildrenMismatch(id) => write!(
                f,
                "branch group at {id} does not list exactly the children of {id}"
            ),
            Violation::SpecDimension {
                parent,
                expected,
                found,
            } => write!(
                f,
                "branch group at {parent} has {expected} children but its spec has {found} entries"
            ),
            Violation::SurveyCountsExceedTotal(id) => {
                write!(f, "survey counts exceed total at group {id}")
            }
            Violation::SurveyExceedsSize { parent, child } => write!(
                f,
                "survey count exceeds survey size for child {child} of {parent}"
            ),
            Violation::NonPositiveConcentration(id) => {
                write!(f, "non-positive concentration at group {id}")
            }
            Violation::FixedNotOnSimplex(id) => {
                write!(
                    f,
                    "fixed probabilities at group {id} are not on the simplex"
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("invalid tree: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no data to delete at node {0}")]
    NoDataToDelete(NodeId),
    #[error("{parent} has no branch group to aggregate")]
    NoBranchGroup { parent: NodeId },
    #[error("cannot aggregate {child}: not a leaf child of {parent}")]
    NotASiblingLeaf { parent: NodeId, child: NodeId },
    #[error("cannot aggregate an empty set of children of {0}")]
    EmptyAggregation(NodeId),
    #[error("aggregate label {0} already names another node")]
    LabelClash(NodeId),
    #[error("cannot aggregate across sources at group {0}")]
    AcrossSources(NodeId),
    #[error("cannot aggregate observed with unobserved leaves at group {0}")]
    MixedObservation(NodeId),
}

fn join_violations(v: &[Violation]) -> String {
    let mut s = String::new();
    for (i, violation) in v.iter().enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        s.push_str(&format!("{violation}"));
    }
    s
}

/// Replace sibling leaves `members` of `parent` by one leaf called `label`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aggregation {
    pub parent: NodeId,
    pub members: Vec<NodeId>,
    pub label: NodeId,
}

impl Aggregation {
    pub fn new(parent: &str, members: &[&str], label: &str) -> Self {
        Aggregation {
            parent: parent.into(),
            members: members.iter().map(|&m| NodeId::from(m)).collect(),
            label: label.into(),
        }
    }
}

/// A rooted tree of population nodes with per-parent branch groups.
///
/// Declaration order of `nodes`, `edges` and group children is preserved and
/// is the order used for probability vectors and reports.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceTree {
    pub name: String,
    pub nodes: Vec<NodeRecord>,
    /// `(child, parent)` pairs.
    pub edges: Vec<(NodeId, NodeId)>,
    pub branch_groups: Vec<BranchGroup>,
}

const SIMPLEX_TOL: f64 = 1e-12;

impl EvidenceTree {
    pub fn new(
        name: impl Into<String>,
        nodes: Vec<NodeRecord>,
        edges: Vec<(NodeId, NodeId)>,
        branch_groups: Vec<BranchGroup>,
    ) -> Self {
        EvidenceTree {
            name: name.into(),
            nodes,
            edges,
            branch_groups,
        }
    }

    /// Build a tree deriving the edges from the branch groups.
    pub fn from_groups(
        name: impl Into<String>,
        nodes: Vec<NodeRecord>,
        branch_groups: Vec<BranchGroup>,
    ) -> Self {
        let edges = branch_groups
            .iter()
            .flat_map(|g| g.children.iter().map(|c| (c.clone(), g.parent.clone())))
            .collect();
        EvidenceTree::new(name, nodes, edges, branch_groups)
    }

    /// Validated constructor.
    pub fn checked(self) -> Result<Self, TreeError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(TreeError::Invalid(violations))
        }
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeRecord> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    fn node_mut(&mut self, id: &NodeId) -> Option<&mut NodeRecord> {
        self.nodes.iter_mut().find(|n| &n.id == id)
    }

    pub fn root(&self) -> Option<&NodeRecord> {
        self.nodes.iter().find(|n| n.role == Role::Root)
    }

    pub fn parent(&self, id: &NodeId) -> Option<&NodeId> {
        self.edges.iter().find(|(c, _)| c == id).map(|(_, p)| p)
    }

    pub fn group(&self, parent: &NodeId) -> Option<&BranchGroup> {
        self.branch_groups.iter().find(|g| &g.parent == parent)
    }

    pub fn group_mut(&mut self, parent: &NodeId) -> Option<&mut BranchGroup> {
        self.branch_groups.iter_mut().find(|g| &g.parent == parent)
    }

    /// Children in branch-group order, falling back to edge order.
    pub fn children(&self, id: &NodeId) -> Vec<&NodeId> {
        match self.group(id) {
            Some(g) => g.children.iter().collect(),
            None => self
                .edges
                .iter()
                .filter(|(_, p)| p == id)
                .map(|(c, _)| c)
                .collect(),
        }
    }

    pub fn is_leaf(&self, id: &NodeId) -> bool {
        !self.edges.iter().any(|(_, p)| p == id)
    }

    /// Preorder traversal from the root following child order.
    pub fn preorder(&self) -> Vec<&NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let Some(root) = self.root() else {
            return out;
        };
        let mut stack = vec![&root.id];
        let mut seen = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            out.push(id);
            for c in self.children(id).into_iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Every invariant violation; empty for a valid tree.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();

        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id.as_str().is_empty() {
                v.push(Violation::EmptyNodeId);
            } else if !ids.insert(&n.id) {
                v.push(Violation::DuplicateNode(n.id.clone()));
            }
        }

        let roots: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.role == Role::Root)
            .map(|n| n.id.clone())
            .collect();
        match roots.len() {
            0 => v.push(Violation::NoRoot),
            1 => {}
            _ => v.push(Violation::MultipleRoots(roots.clone())),
        }

        let mut parent_of: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
        let mut has_children: BTreeSet<&NodeId> = BTreeSet::new();
        for (child, parent) in &self.edges {
            if !ids.contains(child) || !ids.contains(parent) {
                v.push(Violation::UnknownNodeInEdge {
                    child: child.clone(),
                    parent: parent.clone(),
                });
                continue;
            }
            if child == parent {
                v.push(Violation::SelfLoop(child.clone()));
                continue;
            }
            if parent_of.insert(child, parent).is_some() {
                v.push(Violation::DuplicateParent(child.clone()));
            }
            has_children.insert(parent);
        }

        for n in &self.nodes {
            let has_parent = parent_of.contains_key(&n.id);
            let children = has_children.contains(&n.id);
            match n.role {
                Role::Root => {
                    if has_parent {
                        v.push(Violation::RootHasParent(n.id.clone()));
                    }
                }
                _ => {
                    if !has_parent {
                        v.push(Violation::MissingParent(n.id.clone()));
                    }
                }
            }
            match n.role {
                Role::Root | Role::Internal => {
                    if !children {
                        v.push(Violation::InternalWithoutChildren(n.id.clone()));
                    }
                }
                Role::Leaf | Role::UncertaintyLeaf => {
                    if children {
                        v.push(Violation::LeafWithChildren(n.id.clone()));
                    }
                }
            }
            if n.observed_count.is_some() && n.role != Role::Leaf {
                v.push(Violation::CountOnNonLeaf(n.id.clone()));
            }
        }

        // Reachability: walk up from every node; a node is reachable if the
        // walk ends at the single root without revisiting.
        if roots.len() == 1 {
            let root = &roots[0];
            for n in &self.nodes {
                let mut cur = &n.id;
                let mut steps = 0usize;
                let reached = loop {
                    if cur == root {
                        break true;
                    }
                    match parent_of.get(cur) {
                        Some(p) if steps <= self.nodes.len() => {
                            cur = p;
                            steps += 1;
                        }
                        _ => break false,
                    }
                };
                if !reached {
                    v.push(Violation::Unreachable(n.id.clone()));
                }
            }
        }

        let mut grouped = BTreeSet::new();
        for g in &self.branch_groups {
            if !grouped.insert(&g.parent) {
                v.push(Violation::DuplicateBranchGroup(g.parent.clone()));
                continue;
            }
            if !has_children.contains(&g.parent) {
                v.push(Violation::UnknownGroupParent(g.parent.clone()));
                continue;
            }
            let actual: BTreeSet<&NodeId> = self
                .edges
                .iter()
                .filter(|(_, p)| p == &g.parent)
                .map(|(c, _)| c)
                .collect();
            let listed: BTreeSet<&NodeId> = g.children.iter().collect();
            if listed != actual || listed.len() != g.children.len() {
                v.push(Violation::GroupChildrenMismatch(g.parent.clone()));
            }
            if g.spec.dimension() != g.children.len() {
                v.push(Violation::SpecDimension {
                    parent: g.parent.clone(),
                    expected: g.children.len(),
                    found: g.spec.dimension(),
                });
                continue;
            }
            check_spec(&g.parent, &g.children, &g.spec, &mut v);
        }
        for p in &has_children {
            if !grouped.contains(p) {
                v.push(Violation::MissingBranchGroup((*p).clone()));
            }
        }
        v
    }

    /// Paths to every leaf that has an observed count and sampleable
    /// branches along its whole root-to-leaf path, in preorder.
    pub fn informed_leaves(&self) -> Vec<PathDescriptor> {
        let mut out = Vec::new();
        for id in self.preorder() {
            let Some(node) = self.node(id) else { continue };
            if node.role != Role::Leaf || node.observed_count.is_none() {
                continue;
            }
            if let Some(edges) = self.path_edges(id) {
                out.push(PathDescriptor {
                    leaf: id.clone(),
                    edges,
                });
            }
        }
        out
    }

    /// Root-to-node edges, or `None` if some edge cannot be sampled.
    fn path_edges(&self, id: &NodeId) -> Option<Vec<(NodeId, NodeId)>> {
        let mut edges = Vec::new();
        let mut cur = id;
        while let Some(parent) = self.parent(cur) {
            let g = self.group(parent)?;
            let pos = g.position(cur)?;
            if !g.spec.position_informed(pos) {
                return None;
            }
            edges.push((parent.clone(), cur.clone()));
            cur = parent;
            if edges.len() > self.nodes.len() {
                return None;
            }
        }
        edges.reverse();
        Some(edges)
    }

    /// Total observed count over all leaves.
    pub fn observed_total(&self) -> u64 {
        self.nodes.iter().filter_map(|n| n.observed_count).sum()
    }

    /// Merge sibling leaves into single leaves, one [`Aggregation`] at a time.
    pub fn aggregate_siblings(&self, groups: &[Aggregation]) -> Result<EvidenceTree, TreeError> {
        let mut tree = self.clone();
        for agg in groups {
            tree = tree.aggregate_one(agg)?;
        }
        let violations = tree.validate();
        if !violations.is_empty() {
            return Err(TreeError::Invalid(violations));
        }
        Ok(tree)
    }

    fn aggregate_one(mut self, agg: &Aggregation) -> Result<EvidenceTree, TreeError> {
        if agg.members.is_empty() {
            return Err(TreeError::EmptyAggregation(agg.parent.clone()));
        }
        let group = self
            .group(&agg.parent)
            .ok_or_else(|| TreeError::NoBranchGroup {
                parent: agg.parent.clone(),
            })?
            .clone();
        let mut positions = Vec::with_capacity(agg.members.len());
        for m in &agg.members {
            let pos = group
                .position(m)
                .ok_or_else(|| TreeError::NotASiblingLeaf {
                    parent: agg.parent.clone(),
                    child: m.clone(),
                })?;
            let is_leaf = self.node(m).is_some_and(|n| n.role == Role::Leaf);
            if !is_leaf || positions.contains(&pos) {
                return Err(TreeError::NotASiblingLeaf {
                    parent: agg.parent.clone(),
                    child: m.clone(),
                });
            }
            positions.push(pos);
        }
        if !agg.members.contains(&agg.label) && self.node(&agg.label).is_some() {
            return Err(TreeError::LabelClash(agg.label.clone()));
        }
        positions.sort_unstable();
        let first = positions[0];

        let observed: Vec<Option<u64>> = agg
            .members
            .iter()
            .map(|m| self.node(m).and_then(|n| n.observed_count))
            .collect();
        let count = if observed.iter().all(Option::is_some) {
            Some(observed.iter().flatten().sum())
        } else if observed.iter().all(Option::is_none) {
            None
        } else {
            return Err(TreeError::MixedObservation(agg.parent.clone()));
        };

        let spec = merge_spec(&agg.parent, &group.spec, &positions)?;

        let description = {
            let mut d = String::from("aggregate of");
            for m in &agg.members {
                d.push(' ');
                d.push_str(m.as_str());
            }
            d
        };
        let merged = NodeRecord {
            id: agg.label.clone(),
            role: Role::Leaf,
            observed_count: count,
            description,
        };

        // Node list: merged node takes the slot of the first declared member.
        let member_set: BTreeSet<&NodeId> = agg.members.iter().collect();
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut placed = false;
        for n in self.nodes.drain(..) {
            if member_set.contains(&n.id) {
                if !placed {
                    nodes.push(merged.clone());
                    placed = true;
                }
            } else {
                nodes.push(n);
            }
        }
        self.nodes = nodes;

        let mut edges = Vec::with_capacity(self.edges.len());
        let mut placed = false;
        for (c, p) in self.edges.drain(..) {
            if member_set.contains(&c) {
                if !placed {
                    edges.push((agg.label.clone(), p));
                    placed = true;
                }
            } else {
                edges.push((c, p));
            }
        }
        self.edges = edges;

        let g = self
            .group_mut(&agg.parent)
            .expect("group existence checked above");
        let mut children = Vec::with_capacity(g.children.len());
        for (i, c) in g.children.iter().enumerate() {
            if i == first {
                children.push(agg.label.clone());
            } else if !positions.contains(&i) {
                children.push(c.clone());
            }
        }
        g.children = children;
        g.spec = spec;
        Ok(self)
    }

    /// Remove observed counts at `nodes`; survey-informed groups that contain
    /// any of them degrade to a uniform Dirichlet prior.
    pub fn delete_node_data(&self, nodes: &BTreeSet<NodeId>) -> Result<EvidenceTree, TreeError> {
        let mut tree = self.clone();
        for id in nodes {
            let node = tree
                .node_mut(id)
                .ok_or_else(|| TreeError::UnknownNode(id.clone()))?;
            if node.observed_count.take().is_none() {
                return Err(TreeError::NoDataToDelete(id.clone()));
            }
        }
        for g in &mut tree.branch_groups {
            if g.spec.is_survey_informed() && g.children.iter().any(|c| nodes.contains(c)) {
                g.spec = BranchSpec::uniform(g.children.len());
            }
        }
        Ok(tree)
    }

    /// Apply a label bijection. Labels missing from `map` are kept.
    pub fn relabel(&self, map: &BTreeMap<NodeId, NodeId>) -> EvidenceTree {
        let f = |id: &NodeId| map.get(id).cloned().unwrap_or_else(|| id.clone());
        EvidenceTree {
            name: self.name.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: f(&n.id),
                    ..n.clone()
                })
                .collect(),
            edges: self.edges.iter().map(|(c, p)| (f(c), f(p))).collect(),
            branch_groups: self
                .branch_groups
                .iter()
                .map(|g| BranchGroup {
                    parent: f(&g.parent),
                    children: g.children.iter().map(f).collect(),
                    spec: g.spec.clone(),
                })
                .collect(),
        }
    }
}

fn check_spec(parent: &NodeId, children: &[NodeId], spec: &BranchSpec, v: &mut Vec<Violation>) {
    match spec {
        BranchSpec::DirichletSurvey { counts, total } => {
            let sum: u128 = counts.iter().map(|&c| c as u128).sum();
            if sum > *total as u128 {
                v.push(Violation::SurveyCountsExceedTotal(parent.clone()));
            }
        }
        BranchSpec::BetaSurveyPerChild { surveys } => {
            for (child, s) in children.iter().zip(surveys) {
                if let Some(s) = s {
                    if s.x > s.n {
                        v.push(Violation::SurveyExceedsSize {
                            parent: parent.clone(),
                            child: child.clone(),
                        });
                    }
                }
            }
        }
        BranchSpec::DirichletPrior { concentration } => {
            if concentration.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                v.push(Violation::NonPositiveConcentration(parent.clone()));
            }
        }
        BranchSpec::Fixed { probabilities } => {
            let sum: f64 = probabilities.iter().sum();
            if probabilities.iter().any(|&p| !(p >= 0.0 && p.is_finite()))
                || (sum - 1.0).abs() > SIMPLEX_TOL
            {
                v.push(Violation::FixedNotOnSimplex(parent.clone()));
            }
        }
    }
}

/// Merge the spec entries at `positions` (sorted) into the first one.
fn merge_spec(
    parent: &NodeId,
    spec: &BranchSpec,
    positions: &[usize],
) -> Result<BranchSpec, TreeError> {
    fn merge<T: Clone>(items: &[T], positions: &[usize], combine: impl Fn(&[&T]) -> T) -> Vec<T> {
        let members: Vec<&T> = positions.iter().map(|&p| &items[p]).collect();
        let merged = combine(&members);
        let mut out = Vec::with_capacity(items.len() + 1 - positions.len());
        for (i, item) in items.iter().enumerate() {
            if i == positions[0] {
                out.push(merged.clone());
            } else if !positions.contains(&i) {
                out.push(item.clone());
            }
        }
        out
    }

    Ok(match spec {
        BranchSpec::DirichletSurvey { counts, total } => BranchSpec::DirichletSurvey {
            counts: merge(counts, positions, |m| m.iter().copied().sum()),
            total: *total,
        },
        BranchSpec::DirichletPrior { concentration } => BranchSpec::DirichletPrior {
            concentration: merge(concentration, positions, |m| m.iter().copied().sum()),
        },
        BranchSpec::Fixed { probabilities } => BranchSpec::Fixed {
            probabilities: merge(probabilities, positions, |m| m.iter().copied().sum()),
        },
        BranchSpec::BetaSurveyPerChild { surveys } => {
            let members: Vec<Option<Survey>> = positions.iter().map(|&p| surveys[p]).collect();
            let merged = if members.iter().all(Option::is_none) {
                None
            } else {
                let n = match members[0] {
                    Some(s) => s.n,
                    None => return Err(TreeError::AcrossSources(parent.clone())),
                };
                let mut x = 0u64;
                for m in &members {
                    match m {
                        Some(s) if s.n == n => x += s.x,
                        _ => return Err(TreeError::AcrossSources(parent.clone())),
                    }
                }
                Some(Survey { x, n })
            };
            BranchSpec::BetaSurveyPerChild {
                surveys: merge(surveys, positions, |_| merged),
            }
        }
    })
}
