//! TOML tree-spec files.
//!
//! ```toml
//! name = "example"
//!
//! [[nodes]]
//! id = "Z"
//! role = "root"
//!
//! [[nodes]]
//! id = "X"
//! role = "leaf"
//! count = 40
//!
//! [[nodes]]
//! id = "Y"
//! role = "leaf"
//!
//! [[edges]]
//! child = "X"
//! parent = "Z"
//!
//! [[edges]]
//! child = "Y"
//! parent = "Z"
//!
//! [[branch_groups]]
//! parent = "Z"
//! children = ["X", "Y"]
//! kind = "beta_survey"
//! surveys = [{ child = "X", x = 4, n = 10 }]
//!
//! [priors.root]
//! kind = "lognormal"
//! median = 100.0
//! log_sd = 0.3
//!
//! [[priors.groups]]
//! name = "p"
//! parent = "Z"
//! concentration = [1.0, 1.0, 0.2]
//! uncertainty = "W"
//! ```
//!
//! Group kinds and their fields:
//!
//! | kind | fields |
//! |------|--------|
//! | `dirichlet_survey` | `counts` (per child), `total` |
//! | `beta_survey` | `surveys = [{ child, x, n }]`; unlisted children are uninformed |
//! | `dirichlet_prior` | `concentration` |
//! | `fixed` | `probabilities` |
//!
//! The root prior is `lognormal` (`log_mean` or `median`, plus `log_sd`) or
//! `uniform` (`lower`, `upper`).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use treepop_core::bayes::{BayesPriors, GroupPrior, RootPrior};
use treepop_core::{
    BranchGroup, BranchSpec, EvidenceTree, NodeId, NodeRecord, Role, Survey, TreeError,
};

use crate::location::{Locator, PathSeg};

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown field `{path}` at line {line}, column {column}")]
    UnknownField {
        path: String,
        line: usize,
        column: usize,
    },
    #[error("{location}: {message}")]
    Semantic { location: String, message: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Strictness of parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Downgrade unknown fields to warnings.
    pub lenient: bool,
}

/// A parsed document plus any warnings raised in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Tree plus the optional Bayesian prior block.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    pub tree: EvidenceTree,
    pub priors: Option<BayesPriors>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct RawTree {
    name: String,
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<RawEdge>,
    #[serde(default)]
    branch_groups: Vec<RawGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    priors: Option<RawPriors>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawNode {
    id: String,
    role: RawRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<u64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    description: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawRole {
    Root,
    Internal,
    Leaf,
    UncertaintyLeaf,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEdge {
    child: String,
    parent: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub(crate) enum GroupKind {
    DirichletSurvey,
    BetaSurvey,
    DirichletPrior,
    Fixed,
}

/// One branch group; which optional fields apply depends on `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RawGroup {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub parent: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<String>,
    pub kind: GroupKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surveys: Option<Vec<RawSurvey>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RawSurvey {
    child: String,
    x: u64,
    n: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPriors {
    root: RawRoot,
    #[serde(default)]
    groups: Vec<RawGroupPrior>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RootKind {
    Lognormal,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RawRoot {
    kind: RootKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    log_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    median: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    log_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawGroupPrior {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    parent: String,
    concentration: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uncertainty: Option<String>,
}

/// Deserialize `text`, reporting unknown fields as errors (strict) or
/// warnings (lenient), both with line and column.
pub(crate) fn deserialize_checked<T: serde::de::DeserializeOwned>(
    text: &str,
    options: ParseOptions,
) -> Result<Parsed<T>, SpecError> {
    let locator = Locator::new(text).map_err(|e| syntax_error(text, &e))?;
    let de = toml::Deserializer::parse(text).map_err(|e| syntax_error(text, &e))?;
    let mut unknown: Vec<Vec<PathSeg>> = Vec::new();
    let value: T =
        serde_ignored::deserialize(de, |path| unknown.push(crate::location::segments(&path)))
            .map_err(|e| syntax_error(text, &e))?;
    let mut warnings = Vec::new();
    for segs in unknown {
        let (line, column) = locator.locate(&segs);
        let path = crate::location::dotted(&segs);
        if !options.lenient {
            return Err(SpecError::UnknownField { path, line, column });
        }
        warnings.push(format!(
            "ignoring unknown field `{path}` at line {line}, column {column}"
        ));
    }
    Ok(Parsed { value, warnings })
}

fn syntax_error(text: &str, e: &toml::de::Error) -> SpecError {
    let (line, column) = e
        .span()
        .map(|s| crate::location::line_col(text, s.start))
        .unwrap_or((1, 1));
    SpecError::Syntax {
        line,
        column,
        message: e.message().trim().to_string(),
    }
}

pub(crate) fn semantic(
    locator: &Locator,
    path: &[PathSeg],
    message: impl Into<String>,
) -> SpecError {
    let (line, column) = locator.locate(path);
    SpecError::Semantic {
        location: format!("line {line}, column {column}"),
        message: message.into(),
    }
}

/// Parse a tree-spec document and validate the tree.
pub fn parse_tree_spec(text: &str, options: ParseOptions) -> Result<Parsed<TreeSpec>, SpecError> {
    let Parsed {
        value: raw,
        warnings,
    } = deserialize_checked::<RawTree>(text, options)?;
    let locator = Locator::new(text).map_err(|e| syntax_error(text, &e))?;
    let spec = raw_to_spec(raw, &locator)?;
    Ok(Parsed {
        value: spec,
        warnings,
    })
}

pub fn load_tree_spec(path: &Path, options: ParseOptions) -> Result<Parsed<TreeSpec>, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_tree_spec(&text, options)
}

fn raw_to_spec(raw: RawTree, loc: &Locator) -> Result<TreeSpec, SpecError> {
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    let mut seen = std::collections::BTreeSet::new();
    for (i, n) in raw.nodes.iter().enumerate() {
        let at = [PathSeg::key("nodes"), PathSeg::Index(i)];
        if n.id.is_empty() {
            return Err(semantic(loc, &at, "empty node id"));
        }
        if !seen.insert(n.id.clone()) {
            return Err(semantic(loc, &at, format!("duplicate node id {}", n.id)));
        }
        let mut rec = NodeRecord::new(n.id.as_str(), role_from_raw(n.role))
            .with_description(n.description.clone());
        rec.observed_count = n.count;
        nodes.push(rec);
    }
    let edges = raw
        .edges
        .iter()
        .map(|e| {
            (
                NodeId::new(e.child.as_str()),
                NodeId::new(e.parent.as_str()),
            )
        })
        .collect();
    let mut groups = Vec::with_capacity(raw.branch_groups.len());
    for (i, g) in raw.branch_groups.iter().enumerate() {
        let at = [PathSeg::key("branch_groups"), PathSeg::Index(i)];
        let children: Vec<&str> = g.children.iter().map(String::as_str).collect();
        let spec = group_spec(g, &children).map_err(|m| semantic(loc, &at, m))?;
        groups.push(BranchGroup::new(g.parent.as_str(), &children, spec));
    }
    let tree = EvidenceTree::new(raw.name.clone(), nodes, edges, groups).checked()?;
    let priors = match &raw.priors {
        None => None,
        Some(p) => {
            let root = root_from_raw(&p.root)
                .map_err(|m| semantic(loc, &[PathSeg::key("priors"), PathSeg::key("root")], m))?;
            let groups = p
                .groups
                .iter()
                .map(|g| GroupPrior {
                    name: g.name.clone(),
                    parent: g.parent.as_str().into(),
                    concentration: g.concentration.clone(),
                    uncertainty: g.uncertainty.as_deref().map(Into::into),
                })
                .collect();
            Some(BayesPriors { root, groups })
        }
    };
    Ok(TreeSpec { tree, priors })
}

fn role_from_raw(r: RawRole) -> Role {
    match r {
        RawRole::Root => Role::Root,
        RawRole::Internal => Role::Internal,
        RawRole::Leaf => Role::Leaf,
        RawRole::UncertaintyLeaf => Role::UncertaintyLeaf,
    }
}

fn role_to_raw(r: Role) -> RawRole {
    match r {
        Role::Root => RawRole::Root,
        Role::Internal => RawRole::Internal,
        Role::Leaf => RawRole::Leaf,
        Role::UncertaintyLeaf => RawRole::UncertaintyLeaf,
    }
}

/// Convert one raw group into a [`BranchSpec`] over `children`.
pub(crate) fn group_spec(g: &RawGroup, children: &[&str]) -> Result<BranchSpec, String> {
    let stray = |fields: &[(&str, bool)]| -> Result<(), String> {
        match fields.iter().find(|(_, present)| *present) {
            Some((name, _)) => Err(format!(
                "field `{name}` does not apply to kind {:?}",
                g.kind
            )),
            None => Ok(()),
        }
    };
    let need = |name: &str| format!("kind {:?} requires `{name}`", g.kind);
    match g.kind {
        GroupKind::DirichletSurvey => {
            stray(&[
                ("surveys", g.surveys.is_some()),
                ("concentration", g.concentration.is_some()),
                ("probabilities", g.probabilities.is_some()),
            ])?;
            Ok(BranchSpec::DirichletSurvey {
                counts: g.counts.clone().ok_or_else(|| need("counts"))?,
                total: g.total.ok_or_else(|| need("total"))?,
            })
        }
        GroupKind::BetaSurvey => {
            stray(&[
                ("counts", g.counts.is_some()),
                ("total", g.total.is_some()),
                ("concentration", g.concentration.is_some()),
                ("probabilities", g.probabilities.is_some()),
            ])?;
            let surveys = g.surveys.as_ref().ok_or_else(|| need("surveys"))?;
            let mut per_child = vec![None; children.len()];
            for s in surveys {
                let pos = children.iter().position(|c| *c == s.child).ok_or_else(|| {
                    format!(
                        "survey names {} which is not a child of {}",
                        s.child, g.parent
                    )
                })?;
                if per_child[pos].is_some() {
                    return Err(format!("child {} has two surveys", s.child));
                }
                per_child[pos] = Some(Survey { x: s.x, n: s.n });
            }
            Ok(BranchSpec::BetaSurveyPerChild { surveys: per_child })
        }
        GroupKind::DirichletPrior => {
            stray(&[
                ("counts", g.counts.is_some()),
                ("total", g.total.is_some()),
                ("surveys", g.surveys.is_some()),
                ("probabilities", g.probabilities.is_some()),
            ])?;
            Ok(BranchSpec::DirichletPrior {
                concentration: g
                    .concentration
                    .clone()
                    .ok_or_else(|| need("concentration"))?,
            })
        }
        GroupKind::Fixed => {
            stray(&[
                ("counts", g.counts.is_some()),
                ("total", g.total.is_some()),
                ("surveys", g.surveys.is_some()),
                ("concentration", g.concentration.is_some()),
            ])?;
            Ok(BranchSpec::Fixed {
                probabilities: g
                    .probabilities
                    .clone()
                    .ok_or_else(|| need("probabilities"))?,
            })
        }
    }
}

pub(crate) fn group_to_raw(parent: &str, children: &[NodeId], spec: &BranchSpec) -> RawGroup {
    let mut g = RawGroup {
        parent: parent.to_string(),
        children: children.iter().map(|c| c.as_str().to_string()).collect(),
        kind: GroupKind::Fixed,
        counts: None,
        total: None,
        surveys: None,
        concentration: None,
        probabilities: None,
    };
    match spec {
        BranchSpec::DirichletSurvey { counts, total } => {
            g.kind = GroupKind::DirichletSurvey;
            g.counts = Some(counts.clone());
            g.total = Some(*total);
        }
        BranchSpec::BetaSurveyPerChild { surveys } => {
            g.kind = GroupKind::BetaSurvey;
            g.surveys = Some(
                surveys
                    .iter()
                    .zip(children)
                    .filter_map(|(s, c)| {
                        s.map(|s| RawSurvey {
                            child: c.as_str().to_string(),
                            x: s.x,
                            n: s.n,
                        })
                    })
                    .collect(),
            );
        }
        BranchSpec::DirichletPrior { concentration } => {
            g.kind = GroupKind::DirichletPrior;
            g.concentration = Some(concentration.clone());
        }
        BranchSpec::Fixed { probabilities } => {
            g.probabilities = Some(probabilities.clone());
        }
    }
    g
}

pub(crate) fn root_from_raw(r: &RawRoot) -> Result<RootPrior, String> {
    let prior = match r.kind {
        RootKind::Lognormal => {
            if r.lower.is_some() || r.upper.is_some() {
                return Err("`lower`/`upper` do not apply to a lognormal root prior".into());
            }
            let log_mean = match (r.log_mean, r.median) {
                (Some(m), None) => m,
                (None, Some(med)) if med > 0.0 => med.ln(),
                (None, Some(_)) => return Err("`median` must be positive".into()),
                _ => {
                    return Err(
                        "lognormal root prior needs exactly one of `log_mean`, `median`".into(),
                    )
                }
            };
            let log_sd = r.log_sd.ok_or("lognormal root prior needs `log_sd`")?;
            RootPrior::LogNormal { log_mean, log_sd }
        }
        RootKind::Uniform => {
            if r.log_mean.is_some() || r.median.is_some() || r.log_sd.is_some() {
                return Err("lognormal fields do not apply to a uniform root prior".into());
            }
            RootPrior::Uniform {
                lower: r.lower.ok_or("uniform root prior needs `lower`")?,
                upper: r.upper.ok_or("uniform root prior needs `upper`")?,
            }
        }
    };
    prior.validate().map_err(|e| e.to_string())?;
    Ok(prior)
}

pub(crate) fn root_to_raw(p: &RootPrior) -> RawRoot {
    match *p {
        RootPrior::LogNormal { log_mean, log_sd } => RawRoot {
            kind: RootKind::Lognormal,
            log_mean: Some(log_mean),
            median: None,
            log_sd: Some(log_sd),
            lower: None,
            upper: None,
        },
        RootPrior::Uniform { lower, upper } => RawRoot {
            kind: RootKind::Uniform,
            log_mean: None,
            median: None,
            log_sd: None,
            lower: Some(lower),
            upper: Some(upper),
        },
    }
}

/// Canonical TOML for a spec; parsing it back yields an identical tree.
pub fn serialize_tree_spec(spec: &TreeSpec) -> String {
    let t = &spec.tree;
    let raw = RawTree {
        name: t.name.clone(),
        nodes: t
            .nodes
            .iter()
            .map(|n| RawNode {
                id: n.id.as_str().to_string(),
                role: role_to_raw(n.role),
                count: n.observed_count,
                description: n.description.clone(),
            })
            .collect(),
        edges: t
            .edges
            .iter()
            .map(|(c, p)| RawEdge {
                child: c.as_str().to_string(),
                parent: p.as_str().to_string(),
            })
            .collect(),
        branch_groups: t
            .branch_groups
            .iter()
            .map(|g| group_to_raw(g.parent.as_str(), &g.children, &g.spec))
            .collect(),
        priors: spec.priors.as_ref().map(|p| RawPriors {
            root: root_to_raw(&p.root),
            groups: p
                .groups
                .iter()
                .map(|g| RawGroupPrior {
                    name: g.name.clone(),
                    parent: g.parent.as_str().to_string(),
                    concentration: g.concentration.clone(),
                    uncertainty: g.uncertainty.as_ref().map(|u| u.as_str().to_string()),
                })
                .collect(),
        }),
    };
    let mut out = String::new();
    let _ = writeln!(out, "# {}", t.name);
    out.push_str(&toml::to_string(&raw).expect("tree specs serialize"));
    out
}
