//! Scenario suites: prior sensitivity, branch sensitivity and
//! value-of-information studies over both engines.
//!
//! Every scenario derives a tree (and priors) from its base by applying
//! transforms and overrides, runs one engine, and is compared with a
//! reference scenario: the suite baseline unless `relative_to` names
//! another; a scenario naming itself is its own reference, which lets one
//! suite hold a baseline per engine. Scenarios share the suite seed unless
//! they set their own, so a scenario without changes reproduces its
//! reference exactly and deltas reflect the change rather than Monte-Carlo
//! noise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;
use treepop_core::{
    Aggregation, BayesError, BayesModel, BayesPriors, BranchSpec, ChainConfig, EvidenceTree,
    NodeId, PosteriorSummary, RootPrior, TreeError, WmmConfig, WmmError, WmmRun,
};

use crate::bundle::{self, convergence_flags, sig6, BundleError, MAX_RHAT, MIN_ESS};
use crate::parallel;
use crate::spec_file::TreeSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Wmm,
    Bayes,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Wmm => "wmm",
            Engine::Bayes => "bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeTransform {
    Aggregate(Vec<Aggregation>),
    Delete(BTreeSet<NodeId>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorOverride {
    Root(RootPrior),
    Concentration(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

/// A check on the relative change of one quantity against the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub quantity: String,
    pub direction: Option<Direction>,
    /// Minimum size of the change in `direction`.
    pub min_relative: Option<f64>,
    /// Upper bound on the size of the change in either direction.
    pub max_abs_relative: Option<f64>,
}

/// `|delta(larger)| > |delta(smaller)|` for one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub larger: String,
    pub smaller: String,
    pub quantity: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub engine: Engine,
    pub tree: EvidenceTree,
    pub priors: Option<BayesPriors>,
    pub transforms: Vec<TreeTransform>,
    /// Replacement specs for branch groups, keyed by parent.
    pub branch_overrides: Vec<(NodeId, BranchSpec)>,
    /// Keyed by `root`, a prior group name, `p_{parent}` or
    /// `p_{parent}{child}`.
    pub prior_overrides: BTreeMap<String, PriorOverride>,
    pub wmm: WmmConfig,
    pub chain: ChainConfig,
    pub relative_to: Option<String>,
    pub expect: Vec<Expectation>,
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        engine: Engine,
        tree: EvidenceTree,
        priors: Option<BayesPriors>,
    ) -> Self {
        Scenario {
            name: name.into(),
            engine,
            tree,
            priors,
            transforms: Vec::new(),
            branch_overrides: Vec::new(),
            prior_overrides: BTreeMap::new(),
            wmm: WmmConfig::default(),
            chain: ChainConfig::default(),
            relative_to: None,
            expect: Vec::new(),
        }
    }

    /// The tree and priors this scenario runs on.
    pub fn resolve(&self) -> Result<TreeSpec, ScenarioFailure> {
        let mut tree = self.tree.clone();
        for t in &self.transforms {
            tree = match t {
                TreeTransform::Aggregate(groups) => tree.aggregate_siblings(groups)?,
                TreeTransform::Delete(nodes) => tree.delete_node_data(nodes)?,
            };
        }
        for (parent, spec) in &self.branch_overrides {
            let group = tree
                .group_mut(parent)
                .ok_or_else(|| ScenarioFailure::UnknownBranch(parent.to_string()))?;
            group.spec = spec.clone();
        }
        let tree = tree.checked()?;
        let priors = match (&self.priors, self.prior_overrides.is_empty()) {
            (None, true) => None,
            (None, false) => return Err(ScenarioFailure::NoPriors),
            (Some(p), _) => {
                let mut p = p.clone();
                for (key, value) in &self.prior_overrides {
                    apply_override(&mut p, key, value)?;
                }
                Some(p)
            }
        };
        Ok(TreeSpec { tree, priors })
    }
}

fn apply_override(
    priors: &mut BayesPriors,
    key: &str,
    value: &PriorOverride,
) -> Result<(), ScenarioFailure> {
    match value {
        PriorOverride::Root(r) => {
            if key != "root" {
                return Err(ScenarioFailure::UnknownPrior(key.into()));
            }
            priors.root = *r;
        }
        PriorOverride::Concentration(c) => {
            let i =
                find_group(priors, key).ok_or_else(|| ScenarioFailure::UnknownPrior(key.into()))?;
            priors.groups[i].concentration = c.clone();
        }
    }
    Ok(())
}

fn find_group(priors: &BayesPriors, key: &str) -> Option<usize> {
    if let Some(i) = priors
        .groups
        .iter()
        .position(|g| g.name.as_deref() == Some(key))
    {
        return Some(i);
    }
    let rest = key.strip_prefix("p_")?;
    priors.groups.iter().position(|g| {
        let parent = g.parent.as_str();
        rest == parent || rest.strip_prefix(parent).is_some_and(|c| !c.is_empty())
    })
}

/// Errors inside one scenario.
#[derive(Debug, thiserror::Error)]
pub enum ScenarioFailure {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Wmm(#[from] WmmError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error("no branch group under {0}")]
    UnknownBranch(String),
    #[error("unknown prior {0}")]
    UnknownPrior(String),
    #[error("prior overrides need a tree with priors")]
    NoPriors,
    #[error("the bayes engine needs a tree with priors")]
    MissingPriors,
    #[error("unknown quantity {0}")]
    UnknownQuantity(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("suite has no scenarios")]
    Empty,
    #[error("baseline {0} is not a scenario")]
    UnknownBaseline(String),
    #[error("duplicate scenario name {0}")]
    Duplicate(String),
    #[error("scenario {scenario}: reference {reference} is not a scenario")]
    UnknownReference { scenario: String, reference: String },
    #[error("scenario {scenario}: reference {reference} uses a different engine")]
    EngineMismatch { scenario: String, reference: String },
    #[error("comparison names unknown scenario {0}")]
    UnknownComparison(String),
    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: ScenarioFailure,
    },
    #[error("branch {parent}->{child} does not exist")]
    UnknownBranch { parent: String, child: String },
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub name: String,
    pub baseline: String,
    pub scenarios: Vec<Scenario>,
    pub comparisons: Vec<Comparison>,
    /// Quantities listed in the report, where the engine provides them.
    pub quantities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineOutput {
    Wmm(WmmRun),
    Bayes(PosteriorSummary),
}

/// Mean and 95% interval of one quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityResult {
    pub name: String,
    pub estimate: Estimate,
    /// `(mean - reference mean) / reference mean`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub scenario: String,
    pub description: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub name: String,
    pub engine: Engine,
    pub reference: String,
    pub spec: TreeSpec,
    pub quantities: Vec<QuantityResult>,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub flags: Vec<String>,
    pub checks: Vec<CheckResult>,
    pub wmm: WmmConfig,
    pub chain: ChainConfig,
    pub output: EngineOutput,
}

impl ScenarioResult {
    pub fn quantity(&self, name: &str) -> Option<&QuantityResult> {
        self.quantities.iter().find(|q| q.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub suite: String,
    pub baseline: String,
    pub scenarios: Vec<ScenarioResult>,
    pub comparisons: Vec<CheckResult>,
}

impl ScenarioReport {
    pub fn scenario(&self, name: &str) -> Option<&ScenarioResult> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    pub fn checks(&self) -> impl Iterator<Item = &CheckResult> {
        self.scenarios
            .iter()
            .flat_map(|s| &s.checks)
            .chain(&self.comparisons)
    }

    pub fn failed_checks(&self) -> Vec<&CheckResult> {
        self.checks().filter(|c| !c.passed).collect()
    }

    pub fn flagged(&self) -> Vec<&ScenarioResult> {
        self.scenarios
            .iter()
            .filter(|s| !s.flags.is_empty())
            .collect()
    }
}

fn estimate_of(output: &EngineOutput, root: &str, name: &str) -> Option<Estimate> {
    match output {
        EngineOutput::Wmm(run) => (name == root).then_some(Estimate {
            mean: run.mean,
            lower: run.quantile_interval.0,
            upper: run.quantile_interval.1,
        }),
        EngineOutput::Bayes(s) => s.get(name).map(|q| Estimate {
            mean: q.mean,
            lower: q.q025,
            upper: q.q975,
        }),
    }
}

fn run_scenario(s: &Scenario) -> Result<(TreeSpec, EngineOutput), ScenarioFailure> {
    let spec = s.resolve()?;
    let output = match s.engine {
        Engine::Wmm => EngineOutput::Wmm(parallel::run_wmm(&spec.tree, &s.wmm)?),
        Engine::Bayes => {
            let priors = spec.priors.as_ref().ok_or(ScenarioFailure::MissingPriors)?;
            let model = BayesModel::build(&spec.tree, priors)?;
            EngineOutput::Bayes(parallel::run_chains(&model, &s.chain)?)
        }
    };
    Ok((spec, output))
}

fn relative(value: f64, reference: f64) -> f64 {
    if value == reference {
        0.0
    } else {
        (value - reference) / reference
    }
}

fn pct(x: f64) -> String {
    format!("{}%", sig6(x * 100.0))
}

fn check(e: &Expectation, delta: f64) -> (String, bool) {
    let mut parts = Vec::new();
    let mut ok = true;
    if let Some(d) = e.direction {
        let min = e.min_relative.unwrap_or(0.0);
        let (word, pass) = match d {
            Direction::Increase => ("increases", delta > min),
            Direction::Decrease => ("decreases", delta < -min),
        };
        parts.push(if min > 0.0 {
            format!("{word} by more than {}", pct(min))
        } else {
            word.to_string()
        });
        ok &= pass;
    }
    if let Some(m) = e.max_abs_relative {
        parts.push(format!("changes by less than {}", pct(m)));
        ok &= delta.abs() < m;
    }
    (
        format!(
            "{} {} (delta {})",
            e.quantity,
            parts.join(" and "),
            pct(delta)
        ),
        ok,
    )
}

/// Run every scenario and compare each with its reference.
pub fn run_suite(suite: &Suite) -> Result<ScenarioReport, ExperimentError> {
    if suite.scenarios.is_empty() {
        return Err(ExperimentError::Empty);
    }
    let mut index = BTreeMap::new();
    for (i, s) in suite.scenarios.iter().enumerate() {
        if index.insert(s.name.as_str(), i).is_some() {
            return Err(ExperimentError::Duplicate(s.name.clone()));
        }
    }
    let base = *index
        .get(suite.baseline.as_str())
        .ok_or_else(|| ExperimentError::UnknownBaseline(suite.baseline.clone()))?;
    let mut reference = Vec::with_capacity(suite.scenarios.len());
    for (i, s) in suite.scenarios.iter().enumerate() {
        let r = match &s.relative_to {
            _ if i == base => base,
            Some(name) if *name == s.name => i,
            Some(name) => {
                *index
                    .get(name.as_str())
                    .ok_or_else(|| ExperimentError::UnknownReference {
                        scenario: s.name.clone(),
                        reference: name.clone(),
                    })?
            }
            None => base,
        };
        if suite.scenarios[r].engine != s.engine {
            return Err(ExperimentError::EngineMismatch {
                scenario: s.name.clone(),
                reference: suite.scenarios[r].name.clone(),
            });
        }
        reference.push(r);
    }
    for c in &suite.comparisons {
        for name in [&c.larger, &c.smaller] {
            if !index.contains_key(name.as_str()) {
                return Err(ExperimentError::UnknownComparison(name.clone()));
            }
        }
    }

    let outputs = suite
        .scenarios
        .par_iter()
        .map(|s| {
            run_scenario(s).map_err(|source| ExperimentError::Scenario {
                scenario: s.name.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut results = Vec::with_capacity(outputs.len());
    for (i, (s, (spec, output))) in suite.scenarios.iter().zip(&outputs).enumerate() {
        let (ref_spec, ref_output) = &outputs[reference[i]];
        let root = spec.tree.root().map_or(String::new(), |r| r.id.to_string());
        let ref_root = ref_spec
            .tree
            .root()
            .map_or(String::new(), |r| r.id.to_string());
        let delta_of = |name: &str| -> Option<(Estimate, f64)> {
            let e = estimate_of(output, &root, name)?;
            let r = estimate_of(ref_output, &ref_root, name)?;
            Some((e, relative(e.mean, r.mean)))
        };
        let quantities = suite
            .quantities
            .iter()
            .filter_map(|name| {
                delta_of(name).map(|(estimate, delta)| QuantityResult {
                    name: name.clone(),
                    estimate,
                    delta,
                })
            })
            .collect();
        let mut checks = Vec::with_capacity(s.expect.len());
        for e in &s.expect {
            let (_, delta) = delta_of(&e.quantity).ok_or_else(|| ExperimentError::Scenario {
                scenario: s.name.clone(),
                source: ScenarioFailure::UnknownQuantity(e.quantity.clone()),
            })?;
            let (description, passed) = check(e, delta);
            checks.push(CheckResult {
                scenario: s.name.clone(),
                description,
                passed,
            });
        }
        let (max_rhat, min_ess, flags) = match output {
            EngineOutput::Bayes(summary) => (
                Some(summary.max_rhat()),
                Some(summary.min_ess()),
                convergence_flags(summary),
            ),
            EngineOutput::Wmm(_) => (None, None, Vec::new()),
        };
        results.push(ScenarioResult {
            name: s.name.clone(),
            engine: s.engine,
            reference: suite.scenarios[reference[i]].name.clone(),
            spec: spec.clone(),
            quantities,
            max_rhat,
            min_ess,
            flags,
            checks,
            wmm: s.wmm,
            chain: s.chain.clone(),
            output: output.clone(),
        });
    }

    let mut comparisons = Vec::with_capacity(suite.comparisons.len());
    for c in &suite.comparisons {
        let delta = |name: &str| -> Result<f64, ExperimentError> {
            let r = &results[index[name]];
            let (reference, root) = (
                &results[reference[index[name]]],
                r.spec.tree.root().map(|n| n.id.to_string()),
            );
            let root = root.unwrap_or_default();
            let e = estimate_of(&r.output, &root, &c.quantity);
            let b = estimate_of(&reference.output, &root, &c.quantity);
            match (e, b) {
                (Some(e), Some(b)) => Ok(relative(e.mean, b.mean)),
                _ => Err(ExperimentError::Scenario {
                    scenario: name.to_string(),
                    source: ScenarioFailure::UnknownQuantity(c.quantity.clone()),
                }),
            }
        };
        let (dl, ds) = (delta(&c.larger)?, delta(&c.smaller)?);
        comparisons.push(CheckResult {
            scenario: format!("{} vs {}", c.larger, c.smaller),
            description: format!(
                "|delta {}| of {} ({}) exceeds that of {} ({})",
                c.quantity,
                c.larger,
                pct(dl),
                c.smaller,
                pct(ds)
            ),
            passed: dl.abs() > ds.abs(),
        });
    }

    Ok(ScenarioReport {
        suite: suite.name.clone(),
        baseline: suite.baseline.clone(),
        scenarios: results,
        comparisons,
    })
}

/// One alternate spec for a sensitivity run.
#[derive(Debug, Clone, PartialEq)]
pub struct Alternate {
    pub name: String,
    pub spec: BranchSpec,
    pub expect: Vec<Expectation>,
}

/// Re-run the WMM with each alternate spec for the group owning
/// `parent -> child`, against the unmodified tree as baseline.
pub fn wmm_branch_sensitivity(
    tree: &EvidenceTree,
    branch: (&str, &str),
    alternates: &[Alternate],
    config: &WmmConfig,
) -> Result<ScenarioReport, ExperimentError> {
    let (parent, child) = branch;
    let unknown = || ExperimentError::UnknownBranch {
        parent: parent.into(),
        child: child.into(),
    };
    let group = tree.group(&NodeId::new(parent)).ok_or_else(unknown)?;
    group.position(&NodeId::new(child)).ok_or_else(unknown)?;
    let root = tree.root().map_or(String::new(), |r| r.id.to_string());
    let mut base = Scenario::new("baseline", Engine::Wmm, tree.clone(), None);
    base.wmm = *config;
    let mut scenarios = vec![base.clone()];
    for alt in alternates {
        let mut s = base.clone();
        s.name = alt.name.clone();
        s.branch_overrides = vec![(NodeId::new(parent), alt.spec.clone())];
        s.expect = alt.expect.clone();
        scenarios.push(s);
    }
    run_suite(&Suite {
        name: format!("sensitivity of {parent}->{child}"),
        baseline: "baseline".into(),
        scenarios,
        comparisons: Vec::new(),
        quantities: vec![root],
    })
}

/// Write `report.csv`, `checks.csv` and one bundle per scenario under
/// `scenarios/`.
pub fn write_suite_output(
    dir: &Path,
    report: &ScenarioReport,
    samples: bool,
) -> Result<(), BundleError> {
    std::fs::create_dir_all(dir).map_err(|source| BundleError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for s in &report.scenarios {
        for q in &s.quantities {
            rows.push(vec![
                s.name.clone(),
                s.engine.as_str().into(),
                s.reference.clone(),
                q.name.clone(),
                sig6(q.estimate.mean),
                sig6(q.estimate.lower),
                sig6(q.estimate.upper),
                sig6(q.delta),
                s.max_rhat.map(sig6).unwrap_or_default(),
                s.min_ess.map(sig6).unwrap_or_default(),
            ]);
        }
    }
    bundle::write_csv(
        &dir.join("report.csv"),
        &[
            "scenario",
            "engine",
            "reference",
            "quantity",
            "mean",
            "lower",
            "upper",
            "delta",
            "max_rhat",
            "min_ess",
        ],
        &rows,
    )?;
    let checks: Vec<Vec<String>> = report
        .checks()
        .map(|c| {
            vec![
                c.scenario.clone(),
                c.description.clone(),
                if c.passed { "pass" } else { "fail" }.into(),
            ]
        })
        .collect();
    bundle::write_csv(
        &dir.join("checks.csv"),
        &["scenario", "check", "result"],
        &checks,
    )?;
    for s in &report.scenarios {
        let sub = dir.join("scenarios").join(&s.name);
        match &s.output {
            EngineOutput::Wmm(run) => bundle::write_wmm_bundle(&sub, &s.spec, &s.wmm, run)?,
            EngineOutput::Bayes(summary) => {
                bundle::write_bayes_bundle(&sub, &s.spec, &s.chain, summary, samples)?
            }
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ReportRow {
    scenario: String,
    engine: String,
    quantity: String,
    mean: f64,
    lower: f64,
    upper: f64,
    delta: f64,
    max_rhat: Option<f64>,
    min_ess: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct CheckRow {
    scenario: String,
    check: String,
    result: String,
}

/// Human-readable summary of a suite output directory.
pub fn render_suite_report(dir: &Path) -> Result<String, BundleError> {
    let rows: Vec<ReportRow> = bundle::read_rows(&dir.join("report.csv"))?;
    let checks: Vec<CheckRow> = bundle::read_rows(&dir.join("checks.csv"))?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:<6} {:<10} {:>12} {:>12} {:>12} {:>10} {:>8} {:>8}",
        "scenario", "engine", "quantity", "mean", "lower", "upper", "delta", "rhat", "ess"
    );
    for r in &rows {
        let opt = |v: Option<f64>| v.map(sig6).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<24} {:<6} {:<10} {:>12} {:>12} {:>12} {:>10} {:>8} {:>8}",
            r.scenario,
            r.engine,
            r.quantity,
            sig6(r.mean),
            sig6(r.lower),
            sig6(r.upper),
            pct(r.delta),
            opt(r.max_rhat),
            opt(r.min_ess)
        );
    }
    let flagged: BTreeSet<&str> = rows
        .iter()
        .filter(|r| {
            r.max_rhat.is_some_and(|v| v > MAX_RHAT) || r.min_ess.is_some_and(|v| v < MIN_ESS)
        })
        .map(|r| r.scenario.as_str())
        .collect();
    if !flagged.is_empty() {
        let _ = writeln!(
            out,
            "\nconvergence flags (rhat > {MAX_RHAT} or ess < {MIN_ESS}):"
        );
        for s in flagged {
            let _ = writeln!(out, "  {s}");
        }
    }
    if !checks.is_empty() {
        let _ = writeln!(out, "\nchecks:");
        for c in &checks {
            let _ = writeln!(out, "  [{}] {}: {}", c.result, c.scenario, c.check);
        }
    }
    Ok(out)
}
