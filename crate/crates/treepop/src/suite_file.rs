//! TOML scenario-suite files.
//!
//! ```toml
//! name = "voi"
//! seed = 1
//! baseline = "baseline"
//! tree = "full_opioid_bayes.tree"      # relative to this file
//! quantities = ["Z", "A", "B", "C", "p_A", "q_D"]
//!
//! [wmm]
//! iterations = 10000
//!
//! [bayes]
//! chains = 6
//! iterations = 200000
//! burn_in = 100000
//! thin = 10
//!
//! [[scenarios]]
//! name = "baseline"
//! engine = "bayes"
//!
//! [[scenarios]]
//! name = "no_fatal"
//! engine = "bayes"
//! delete = ["J", "K", "H", "N", "Q", "T"]
//! expect = [{ quantity = "Z", direction = "increase", min_relative = 0.10 }]
//!
//! [[comparisons]]
//! larger = "wmm_up"
//! smaller = "bayes_up"
//! quantity = "Z"
//! ```
//!
//! Scenario fields, all optional except `name` and `engine`:
//!
//! | field | meaning |
//! |-------|---------|
//! | `tree` | tree file replacing the suite tree |
//! | `seed` | seed replacing the suite seed |
//! | `relative_to` | reference scenario for deltas (default: baseline) |
//! | `aggregate` | `[{ parent, members, label }]`, applied first |
//! | `delete` | node ids whose counts are removed |
//! | `branch_overrides` | branch groups in tree-file syntax replacing the group under `parent` |
//! | `prior_overrides` | `{ root = { kind, ... }, <group> = [concentration] }` |
//! | `wmm`, `bayes` | per-scenario run settings |
//! | `expect` | `[{ quantity, direction, min_relative, max_abs_relative }]` |

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use treepop_core::{Aggregation, ChainConfig, LatentKernel, NodeId, WmmConfig};

use crate::experiments::{
    Comparison, Direction, Engine, Expectation, PriorOverride, Scenario, Suite, TreeTransform,
};
use crate::location::{Locator, PathSeg};
use crate::spec_file::{
    deserialize_checked, group_spec, load_tree_spec, root_from_raw, semantic, ParseOptions, Parsed,
    RawGroup, RawRoot, SpecError, TreeSpec,
};

#[derive(Debug, Deserialize)]
struct RawSuite {
    name: String,
    seed: u64,
    baseline: String,
    tree: String,
    #[serde(default)]
    quantities: Option<Vec<String>>,
    #[serde(default)]
    wmm: RawWmm,
    #[serde(default)]
    bayes: RawBayes,
    #[serde(default)]
    scenarios: Vec<RawScenario>,
    #[serde(default)]
    comparisons: Vec<RawComparison>,
}

#[derive(Debug, Default, Clone, Deserialize)]
struct RawWmm {
    iterations: Option<usize>,
    interval_mass: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawKernel {
    Collapsed,
    Conditional,
}

#[derive(Debug, Default, Clone, Deserialize)]
struct RawBayes {
    chains: Option<usize>,
    iterations: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    kernel: Option<RawKernel>,
    tune: Option<bool>,
    step_sizes: Option<Vec<u64>>,
}

#[derive(Debug, Deserialize)]
struct RawScenario {
    name: String,
    engine: Engine,
    tree: Option<String>,
    seed: Option<u64>,
    relative_to: Option<String>,
    #[serde(default)]
    aggregate: Vec<RawAggregation>,
    #[serde(default)]
    delete: Vec<String>,
    #[serde(default)]
    branch_overrides: Vec<RawGroup>,
    #[serde(default)]
    prior_overrides: RawOverrides,
    #[serde(default)]
    wmm: RawWmm,
    #[serde(default)]
    bayes: RawBayes,
    #[serde(default)]
    expect: Vec<RawExpect>,
}

#[derive(Debug, Deserialize)]
struct RawAggregation {
    parent: String,
    members: Vec<String>,
    label: String,
}

#[derive(Debug, Default, Deserialize)]
struct RawOverrides {
    root: Option<RawRoot>,
    #[serde(flatten)]
    groups: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct RawExpect {
    quantity: String,
    direction: Option<Direction>,
    min_relative: Option<f64>,
    max_abs_relative: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawComparison {
    larger: String,
    smaller: String,
    quantity: String,
}

fn wmm_config(base: &WmmConfig, raw: &RawWmm) -> WmmConfig {
    WmmConfig {
        iterations: raw.iterations.unwrap_or(base.iterations),
        seed: base.seed,
        interval_mass: raw.interval_mass.unwrap_or(base.interval_mass),
    }
}

fn chain_config(base: &ChainConfig, raw: &RawBayes) -> ChainConfig {
    ChainConfig {
        chains: raw.chains.unwrap_or(base.chains),
        iterations: raw.iterations.unwrap_or(base.iterations),
        burn_in: raw.burn_in.unwrap_or(base.burn_in),
        thin: raw.thin.unwrap_or(base.thin),
        seed: base.seed,
        step_sizes: raw.step_sizes.clone().or_else(|| base.step_sizes.clone()),
        tune: raw.tune.unwrap_or(base.tune),
        kernel: match raw.kernel {
            Some(RawKernel::Collapsed) => LatentKernel::Collapsed,
            Some(RawKernel::Conditional) => LatentKernel::Conditional,
            None => base.kernel,
        },
        keep_traces: base.keep_traces,
    }
}

/// Parse a suite document; tree paths resolve against `base_dir`.
pub fn parse_suite(
    text: &str,
    base_dir: &Path,
    options: ParseOptions,
) -> Result<Parsed<Suite>, SpecError> {
    let Parsed {
        value: raw,
        mut warnings,
    } = deserialize_checked::<RawSuite>(text, options)?;
    let loc = Locator::new(text).map_err(|e| SpecError::Syntax {
        line: 1,
        column: 1,
        message: e.message().to_string(),
    })?;
    let mut trees: BTreeMap<PathBuf, TreeSpec> = BTreeMap::new();
    let mut load =
        |rel: &str, at: &[PathSeg], warnings: &mut Vec<String>| -> Result<TreeSpec, SpecError> {
            let path = base_dir.join(rel);
            if let Some(t) = trees.get(&path) {
                return Ok(t.clone());
            }
            let parsed = load_tree_spec(&path, options)
                .map_err(|e| semantic(&loc, at, format!("tree {}: {e}", path.display())))?;
            warnings.extend(
                parsed
                    .warnings
                    .into_iter()
                    .map(|w| format!("{}: {w}", path.display())),
            );
            trees.insert(path, parsed.value.clone());
            Ok(parsed.value)
        };

    let suite_tree = load(&raw.tree, &[PathSeg::key("tree")], &mut warnings)?;
    let wmm_base = WmmConfig {
        seed: raw.seed,
        ..wmm_config(&WmmConfig::default(), &raw.wmm)
    };
    let chain_base = ChainConfig {
        seed: raw.seed,
        ..chain_config(&ChainConfig::default(), &raw.bayes)
    };

    let mut scenarios = Vec::with_capacity(raw.scenarios.len());
    for (i, rs) in raw.scenarios.iter().enumerate() {
        let at = |key: &str| {
            [
                PathSeg::key("scenarios"),
                PathSeg::Index(i),
                PathSeg::key(key),
            ]
        };
        let base = match &rs.tree {
            Some(rel) => load(rel, &at("tree"), &mut warnings)?,
            None => suite_tree.clone(),
        };
        let mut s = Scenario::new(rs.name.clone(), rs.engine, base.tree, base.priors);
        if !rs.aggregate.is_empty() {
            s.transforms.push(TreeTransform::Aggregate(
                rs.aggregate
                    .iter()
                    .map(|a| Aggregation {
                        parent: a.parent.as_str().into(),
                        members: a.members.iter().map(|m| m.as_str().into()).collect(),
                        label: a.label.as_str().into(),
                    })
                    .collect(),
            ));
        }
        if !rs.delete.is_empty() {
            let nodes: BTreeSet<NodeId> = rs.delete.iter().map(|d| d.as_str().into()).collect();
            s.transforms.push(TreeTransform::Delete(nodes));
        }
        if !rs.branch_overrides.is_empty() {
            let transformed = s.resolve().map_err(|e| {
                semantic(
                    &loc,
                    &[PathSeg::key("scenarios"), PathSeg::Index(i)],
                    e.to_string(),
                )
            })?;
            for (j, g) in rs.branch_overrides.iter().enumerate() {
                let at = [
                    PathSeg::key("scenarios"),
                    PathSeg::Index(i),
                    PathSeg::key("branch_overrides"),
                    PathSeg::Index(j),
                ];
                let group = transformed
                    .tree
                    .group(&NodeId::new(g.parent.as_str()))
                    .ok_or_else(|| {
                        semantic(&loc, &at, format!("no branch group under `{}`", g.parent))
                    })?;
                let actual: Vec<&str> = group.children.iter().map(NodeId::as_str).collect();
                if !g.children.is_empty()
                    && g.children
                        .iter()
                        .map(String::as_str)
                        .ne(actual.iter().copied())
                {
                    return Err(semantic(
                        &loc,
                        &at,
                        format!("children of `{}` are {}", g.parent, actual.join(", ")),
                    ));
                }
                let spec = group_spec(g, &actual).map_err(|m| semantic(&loc, &at, m))?;
                s.branch_overrides.push((g.parent.as_str().into(), spec));
            }
        }
        if let Some(r) = &rs.prior_overrides.root {
            let root = root_from_raw(r).map_err(|m| {
                semantic(
                    &loc,
                    &[
                        PathSeg::key("scenarios"),
                        PathSeg::Index(i),
                        PathSeg::key("prior_overrides"),
                        PathSeg::key("root"),
                    ],
                    m,
                )
            })?;
            s.prior_overrides
                .insert("root".into(), PriorOverride::Root(root));
        }
        for (k, c) in &rs.prior_overrides.groups {
            s.prior_overrides
                .insert(k.clone(), PriorOverride::Concentration(c.clone()));
        }
        let seeded = |seed: Option<u64>| seed.unwrap_or(raw.seed);
        s.wmm = WmmConfig {
            seed: seeded(rs.seed),
            ..wmm_config(&wmm_base, &rs.wmm)
        };
        s.chain = ChainConfig {
            seed: seeded(rs.seed),
            ..chain_config(&chain_base, &rs.bayes)
        };
        s.relative_to = rs.relative_to.clone();
        s.expect = rs
            .expect
            .iter()
            .map(|e| Expectation {
                quantity: e.quantity.clone(),
                direction: e.direction,
                min_relative: e.min_relative,
                max_abs_relative: e.max_abs_relative,
            })
            .collect();
        if s.expect
            .iter()
            .any(|e| e.direction.is_none() && e.max_abs_relative.is_none())
        {
            return Err(semantic(
                &loc,
                &at("expect"),
                "an expectation needs `direction` or `max_abs_relative`",
            ));
        }
        scenarios.push(s);
    }

    let quantities = raw.quantities.clone().unwrap_or_else(|| {
        suite_tree
            .tree
            .root()
            .map(|r| vec![r.id.to_string()])
            .unwrap_or_default()
    });
    let suite = Suite {
        name: raw.name,
        baseline: raw.baseline,
        scenarios,
        comparisons: raw
            .comparisons
            .into_iter()
            .map(|c| Comparison {
                larger: c.larger,
                smaller: c.smaller,
                quantity: c.quantity,
            })
            .collect(),
        quantities,
    };
    Ok(Parsed {
        value: suite,
        warnings,
    })
}

pub fn load_suite(path: &Path, options: ParseOptions) -> Result<Parsed<Suite>, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_suite(&text, dir, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
    }

    const DOC: &str = r#"
name = "t"
seed = 4
baseline = "base"
tree = "full_opioid_bayes.tree"

[bayes]
iterations = 3000
burn_in = 1000

[[scenarios]]
name = "base"
engine = "bayes"

[[scenarios]]
name = "q_up"
engine = "bayes"
seed = 9
prior_overrides = { q = [10.0, 2.0], root = { kind = "uniform", lower = 34113, upper = 200000 } }
expect = [{ quantity = "Z", direction = "decrease" }]

[[scenarios]]
name = "ad"
engine = "wmm"
relative_to = "w"
aggregate = [{ parent = "B", members = ["E", "F"], label = "EF" }]
branch_overrides = [{ parent = "A", kind = "beta_survey", surveys = [{ child = "D", x = 2, n = 10 }] }]
"#;

    #[test]
    fn parses_scenarios() {
        let s = parse_suite(DOC, &data_dir(), ParseOptions::default())
            .unwrap()
            .value;
        assert_eq!(s.scenarios.len(), 3);
        assert_eq!(s.quantities, vec!["Z".to_string()]);
        let q = &s.scenarios[1];
        assert_eq!(q.chain.seed, 9);
        assert_eq!(q.chain.iterations, 3000);
        assert_eq!(q.chain.burn_in, 1000);
        assert_eq!(
            q.prior_overrides["q"],
            PriorOverride::Concentration(vec![10.0, 2.0])
        );
        assert!(matches!(q.prior_overrides["root"], PriorOverride::Root(_)));
        let spec = q.resolve().unwrap();
        assert_eq!(
            spec.priors.unwrap().groups[1].concentration,
            vec![10.0, 2.0]
        );
        let ad = &s.scenarios[2];
        assert_eq!(ad.wmm.seed, 4);
        assert_eq!(ad.relative_to.as_deref(), Some("w"));
        let spec = ad.resolve().unwrap();
        assert!(spec.tree.node(&NodeId::new("EF")).is_some());
    }

    #[test]
    fn unknown_scenario_field_is_located() {
        let doc = DOC.replace("seed = 9", "seed = 9\nsede = 3");
        let e = parse_suite(&doc, &data_dir(), ParseOptions::default()).unwrap_err();
        assert!(e.to_string().contains("scenarios.1.sede"), "{e}");
        assert!(e.to_string().contains("line 19"), "{e}");
    }

    #[test]
    fn bad_override_child_list_is_rejected() {
        let doc = DOC.replace(
            "parent = \"A\", kind",
            "parent = \"A\", children = [\"D\", \"C\"], kind",
        );
        let e = parse_suite(&doc, &data_dir(), ParseOptions::default()).unwrap_err();
        assert!(e.to_string().contains("children of `A` are C, D"), "{e}");
    }
}
