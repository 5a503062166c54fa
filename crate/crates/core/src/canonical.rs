//! The British Columbia overdose pathway trees and model priors.
//!
//! Counts are the aggregate cohort counts for 2015–2017. Survey
//! parameters of the healthcare-attended arm are the same counts (population
//! level); the unattended arm uses small expert surveys.
//!
//! Node labels follow the multiplier-method trees. The Bayesian tree adds one
//! uncertainty leaf to four sibling groups; its labels are this crate's
//! convention:
//!
//! | uncertainty leaf | parent | prior |
//! |------------------|--------|-------|
//! | `L` | `D` (unattended deaths) | `s` |
//! | `I` | `B` (healthcare-attended) | `r` |
//! | `R` | `G` | `t` |
//! | `U` | `P` | `u` |

use alloc::vec;
use alloc::vec::Vec;

use crate::bayes::{BayesPriors, GroupPrior, RootPrior};
use crate::tree::{BranchGroup, BranchSpec, EvidenceTree, NodeRecord, Role, Survey};

fn node(id: &str, role: Role, description: &str) -> NodeRecord {
    NodeRecord::new(id, role).with_description(description)
}

fn leaf(id: &str, count: u64, description: &str) -> NodeRecord {
    NodeRecord::new(id, Role::Leaf)
        .with_count(count)
        .with_description(description)
}

fn survey(counts: &[u64], total: u64) -> BranchSpec {
    BranchSpec::DirichletSurvey {
        counts: counts.to_vec(),
        total,
    }
}

fn upper_groups() -> Vec<BranchGroup> {
    vec![
        BranchGroup::new("Z", &["A", "B"], survey(&[2, 3], 5)),
        BranchGroup::new(
            "A",
            &["C", "D"],
            BranchSpec::BetaSurveyPerChild {
                surveys: vec![None, Some(Survey { x: 1, n: 10 })],
            },
        ),
        BranchGroup::new("D", &["J", "K"], survey(&[173, 2279], 2452)),
    ]
}

fn upper_nodes() -> Vec<NodeRecord> {
    vec![
        node("Z", Role::Root, "all opioid overdose events"),
        node("A", Role::Internal, "healthcare-unattended overdoses"),
        node("B", Role::Internal, "healthcare-attended overdoses"),
        node("C", Role::Leaf, "unattended, survived"),
        node("D", Role::Internal, "unattended, fatal"),
        leaf("J", 173, "unattended fatal, vital statistics record only"),
        leaf("K", 2279, "unattended fatal, coroners record"),
    ]
}

/// Full multiplier-method tree (eleven informed leaves).
pub fn full_opioid() -> EvidenceTree {
    let mut nodes = upper_nodes();
    nodes.extend([
        leaf("E", 16922, "attended pathway E"),
        leaf("F", 1390, "attended pathway F"),
        node("G", Role::Internal, "attended pathway G"),
        leaf("H", 473, "attended, fatal"),
        leaf("M", 11678, "pathway G, subgroup M"),
        leaf("N", 199, "pathway G, fatal subgroup N"),
        leaf("O", 1030, "pathway G, subgroup O"),
        node("P", Role::Internal, "pathway G, hospital record"),
        leaf("Q", 45, "pathway G, fatal subgroup Q"),
        leaf("S", 2270, "hospital record, survived"),
        leaf("T", 106, "hospital record, fatal"),
    ]);
    let mut groups = upper_groups();
    groups.extend([
        BranchGroup::new(
            "B",
            &["E", "F", "G", "H"],
            survey(&[16922, 1390, 15328, 473], 34113),
        ),
        BranchGroup::new(
            "G",
            &["M", "N", "O", "P", "Q"],
            survey(&[11678, 199, 1030, 2376, 45], 15328),
        ),
        BranchGroup::new("P", &["S", "T"], survey(&[2270, 106], 2376)),
    ]);
    EvidenceTree::from_groups("full_opioid", nodes, groups)
}

/// Simplified tree: `{E, F}` merged into `F` and `{M, N, O}` into `O`.
pub fn simple_opioid() -> EvidenceTree {
    let mut nodes = upper_nodes();
    nodes.extend([
        leaf("F", 18312, "aggregate of E F"),
        node("G", Role::Internal, "attended pathway G"),
        leaf("H", 473, "attended, fatal"),
        leaf("O", 12907, "aggregate of M N O"),
        node("P", Role::Internal, "pathway G, hospital record"),
        leaf("Q", 45, "pathway G, fatal subgroup Q"),
        leaf("S", 2270, "hospital record, survived"),
        leaf("T", 106, "hospital record, fatal"),
    ]);
    let mut groups = upper_groups();
    groups.extend([
        BranchGroup::new("B", &["F", "G", "H"], survey(&[18312, 15328, 473], 34113)),
        BranchGroup::new("G", &["O", "P", "Q"], survey(&[12907, 2376, 45], 15328)),
        BranchGroup::new("P", &["S", "T"], survey(&[2270, 106], 2376)),
    ]);
    EvidenceTree::from_groups("simple_opioid", nodes, groups)
}

/// `LogNormal(log(51000), 0.38)` on the root.
pub fn opioid_root_prior() -> RootPrior {
    RootPrior::LogNormal {
        log_mean: libm::log(51000.0),
        log_sd: 0.38,
    }
}

fn group(name: &str, parent: &str, concentration: &[f64], uncertainty: Option<&str>) -> GroupPrior {
    GroupPrior {
        name: Some(name.into()),
        parent: parent.into(),
        concentration: concentration.to_vec(),
        uncertainty: uncertainty.map(Into::into),
    }
}

/// Branch priors `p, q, r, s, t, u` for [`full_opioid`], listed in the tree's
/// child order with the uncertainty component last.
pub fn opioid_priors() -> BayesPriors {
    BayesPriors {
        root: opioid_root_prior(),
        groups: vec![
            group("p", "Z", &[10.0, 15.0], None),
            group("q", "A", &[10.0, 1.0], None),
            group("s", "D", &[5.0, 5.0, 1.0], Some("L")),
            group("r", "B", &[5.0, 5.0, 5.0, 5.0, 4.0], Some("I")),
            group("t", "G", &[30.0, 30.0, 30.0, 30.0, 30.0, 12.0], Some("R")),
            group("u", "P", &[30.0, 30.0, 5.0], Some("U")),
        ],
    }
}

/// Priors for [`simple_opioid`]: merged siblings sum their concentrations,
/// which leaves the prior on every other component unchanged.
pub fn aggregated_priors() -> BayesPriors {
    let mut priors = opioid_priors();
    for g in &mut priors.groups {
        match g.name.as_deref() {
            Some("r") => g.concentration = vec![10.0, 5.0, 5.0, 4.0],
            Some("t") => g.concentration = vec![90.0, 30.0, 30.0, 12.0],
            _ => {}
        }
    }
    priors
}
