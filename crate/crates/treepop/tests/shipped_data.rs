use std::path::{Path, PathBuf};

use treepop::spec_file::{
    load_tree_spec, parse_tree_spec, serialize_tree_spec, ParseOptions, TreeSpec,
};
use treepop::suite_file::load_suite;
use treepop_core::canonical::{aggregated_priors, full_opioid, opioid_priors, simple_opioid};
use treepop_core::{BayesPriors, BranchSpec, NodeId, RootPrior};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn load(name: &str) -> TreeSpec {
    let parsed = load_tree_spec(&data(name), ParseOptions::default()).unwrap();
    assert!(parsed.warnings.is_empty(), "{:?}", parsed.warnings);
    parsed.value
}

fn assert_priors_match(file: &BayesPriors, expected: &BayesPriors) {
    assert_eq!(file.groups, expected.groups);
    match (&file.root, &expected.root) {
        (
            RootPrior::LogNormal {
                log_mean: a,
                log_sd: sa,
            },
            RootPrior::LogNormal {
                log_mean: b,
                log_sd: sb,
            },
        ) => {
            // The file stores the median; its logarithm may differ in the last bit.
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs(), "{a} {b}");
            assert_eq!(sa, sb);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn tree_files_encode_the_canonical_trees() {
    assert_eq!(
        load("full_opioid.tree"),
        TreeSpec {
            tree: full_opioid(),
            priors: None
        }
    );
    assert_eq!(
        load("simple_opioid.tree"),
        TreeSpec {
            tree: simple_opioid(),
            priors: None
        }
    );
    let full = load("full_opioid_bayes.tree");
    assert_eq!(full.tree, full_opioid());
    assert_priors_match(full.priors.as_ref().unwrap(), &opioid_priors());
    let simple = load("simple_opioid_bayes.tree");
    assert_eq!(simple.tree, simple_opioid());
    assert_priors_match(simple.priors.as_ref().unwrap(), &aggregated_priors());
}

#[test]
fn full_tree_has_eleven_informed_leaves() {
    let leaves: Vec<String> = load("full_opioid.tree")
        .tree
        .informed_leaves()
        .into_iter()
        .map(|p| p.leaf.to_string())
        .collect();
    assert_eq!(leaves.len(), 11);
    let mut sorted = leaves.clone();
    sorted.sort();
    assert_eq!(
        sorted,
        ["E", "F", "H", "J", "K", "M", "N", "O", "Q", "S", "T"]
    );
}

#[test]
fn simplified_tree_has_aggregated_survey() {
    let spec = load("simple_opioid.tree");
    let g = spec.tree.group(&NodeId::new("B")).unwrap();
    let f = g.position(&NodeId::new("F")).unwrap();
    match &g.spec {
        BranchSpec::DirichletSurvey { counts, total } => {
            assert_eq!((counts[f], *total), (18312, 34113));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn shipped_files_round_trip() {
    for name in [
        "full_opioid.tree",
        "simple_opioid.tree",
        "full_opioid_bayes.tree",
        "simple_opioid_bayes.tree",
    ] {
        let spec = load(name);
        let text = serialize_tree_spec(&spec);
        let again = parse_tree_spec(&text, ParseOptions::default())
            .unwrap()
            .value;
        assert_eq!(again, spec, "{name}");
    }
}

#[test]
fn shipped_suites_parse() {
    for name in ["voi.suite", "sensitivity.suite", "aggregation.suite"] {
        let parsed = load_suite(&data(name), ParseOptions::default()).unwrap();
        assert!(parsed.warnings.is_empty());
        let suite = parsed.value;
        assert!(
            suite.scenarios.iter().any(|s| s.name == suite.baseline),
            "{name}"
        );
        for s in &suite.scenarios {
            s.resolve()
                .unwrap_or_else(|e| panic!("{name}/{}: {e}", s.name));
        }
    }
}
