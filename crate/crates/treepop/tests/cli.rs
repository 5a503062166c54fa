use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use treepop::bundle::{read_metadata, read_summary, read_weights, sig6, Results};
use treepop::spec_file::{load_tree_spec, ParseOptions};
use treepop_core::wmm::{run_wmm, WmmConfig};

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
        .display()
        .to_string()
}

fn treepop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treepop"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

const SMALL_BAYES: [&str; 8] = [
    "--chains",
    "2",
    "--iterations",
    "2000",
    "--burn-in",
    "1000",
    "--thin",
    "2",
];

#[test]
fn validate_writes_nothing_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_treepop"))
        .current_dir(tmp.path())
        .args(["validate", &data("full_opioid.tree")])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    assert!(stderr(&out).contains("11 informed leaves"));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o").display().to_string();
    for args in [
        vec!["wmm", &data("full_opioid.tree"), "--out", &o],
        vec!["frobnicate"],
        vec!["wmm", &data("full_opioid.tree"), "--seed", "x", "--out", &o],
        vec![],
    ] {
        let out = treepop(&args);
        assert_eq!(code(&out), 1, "{args:?}: {}", stderr(&out));
        assert!(out.stdout.is_empty());
    }
    assert_eq!(code(&treepop(&["--help"])), 0);
    assert_eq!(code(&treepop(&["--version"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.tree");
    let text = fs::read_to_string(data("full_opioid.tree")).unwrap();
    fs::write(
        &bad,
        text.replacen("role = \"root\"", "role = \"root\"\ncolour = \"red\"", 1),
    )
    .unwrap();
    let bad = bad.display().to_string();

    let out = treepop(&["validate", &bad]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("unknown field `nodes.0.colour` at line"),
        "{}",
        stderr(&out)
    );
    let out = treepop(&["validate", &bad, "--lenient"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("warning: ignoring unknown field"));

    let o = tmp.path().join("o").display().to_string();
    let out = treepop(&[
        "bayes",
        &data("full_opioid.tree"),
        "--seed",
        "1",
        "--out",
        &o,
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no priors block"));
    assert_eq!(code(&treepop(&["validate", "/nonexistent.tree"])), 2);
    assert_eq!(code(&treepop(&["report", tmp.path().to_str().unwrap()])), 2);

    let empty = tmp.path().join("empty.suite");
    fs::write(
        &empty,
        format!(
            "name = \"e\"\nseed = 1\nbaseline = \"b\"\ntree = \"{}\"\n",
            data("full_opioid.tree")
        ),
    )
    .unwrap();
    let out = treepop(&["suite", empty.to_str().unwrap(), "--out", &o]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("suite has no scenarios"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn strict_convergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o").display().to_string();
    let tree = data("full_opioid_bayes.tree");
    let short = [
        "--chains",
        "2",
        "--iterations",
        "400",
        "--burn-in",
        "200",
        "--thin",
        "1",
    ];
    let mut args = vec!["bayes", tree.as_str(), "--seed", "2", "--out", o.as_str()];
    args.extend(short);
    let out = treepop(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("convergence:"));
    args.push("--strict-convergence");
    assert_eq!(code(&treepop(&args)), 3);
    let meta = read_metadata(Path::new(&o)).unwrap();
    match meta.results {
        Results::Bayes { flagged, .. } => assert!(!flagged.is_empty()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn identical_command_lines_give_identical_bundles() {
    let tmp = tempfile::tempdir().unwrap();
    let tree = data("full_opioid.tree");
    let btree = data("full_opioid_bayes.tree");
    let mut runs = Vec::new();
    for k in 0..2 {
        let w = tmp.path().join(format!("w{k}"));
        let out = treepop(&[
            "wmm",
            &tree,
            "--iterations",
            "3000",
            "--seed",
            "7",
            "--out",
            w.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let b = tmp.path().join(format!("b{k}"));
        let mut args = vec![
            "bayes",
            btree.as_str(),
            "--seed",
            "7",
            "--samples",
            "--out",
            b.to_str().unwrap(),
        ];
        args.extend(SMALL_BAYES);
        let out = treepop(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        runs.push((files(&w), files(&b)));
    }
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1, runs[1].1);
    let names: Vec<String> = runs[0].1.keys().map(|p| p.display().to_string()).collect();
    assert_eq!(
        names,
        [
            "acf.csv",
            "histogram.csv",
            "metadata.json",
            "samples.csv",
            "summary.csv"
        ]
    );
    let wnames: Vec<String> = runs[0].0.keys().map(|p| p.display().to_string()).collect();
    assert_eq!(
        wnames,
        [
            "histogram.csv",
            "metadata.json",
            "samples.csv",
            "summary.csv",
            "weights.csv"
        ]
    );

    let other = tmp.path().join("w_other");
    treepop(&[
        "wmm",
        &tree,
        "--iterations",
        "3000",
        "--seed",
        "8",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_ne!(
        files(&other)[Path::new("summary.csv")],
        runs[0].0[Path::new("summary.csv")]
    );
}

#[test]
fn suite_bundles_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = tmp.path().join("s.suite");
    fs::write(
        &suite,
        format!(
            r#"name = "s"
seed = 3
baseline = "base"
tree = "{}"

[wmm]
iterations = 2000

[bayes]
chains = 2
iterations = 3000
burn_in = 1000

[[scenarios]]
name = "base"
engine = "bayes"

[[scenarios]]
name = "no_fatal"
engine = "bayes"
delete = ["J", "K", "H", "N", "Q", "T"]
expect = [{{ quantity = "Z", direction = "increase" }}]

[[scenarios]]
name = "w"
engine = "wmm"
relative_to = "w"
"#,
            data("full_opioid_bayes.tree")
        ),
    )
    .unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let o = tmp.path().join(format!("o{k}"));
        let out = treepop(&[
            "suite",
            suite.to_str().unwrap(),
            "--out",
            o.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(
            stderr(&out).contains("[pass] no_fatal: Z increases"),
            "{}",
            stderr(&out)
        );
        outputs.push(files(&o));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(outputs[0].contains_key(Path::new("scenarios/no_fatal/summary.csv")));
    assert!(outputs[0].contains_key(Path::new("scenarios/w/weights.csv")));
    let report = treepop(&["report", tmp.path().join("o0").to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("no_fatal"));
    assert!(text.contains("[pass]"));
}

#[test]
fn csv_values_match_the_run_and_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("w");
    let tree = data("simple_opioid.tree");
    let out = treepop(&[
        "wmm",
        &tree,
        "--iterations",
        "2500",
        "--seed",
        "5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    let spec = load_tree_spec(Path::new(&tree), ParseOptions::default())
        .unwrap()
        .value;
    let run = run_wmm(&spec.tree, &WmmConfig::new(2500, 5)).unwrap();
    let summary = read_summary(&dir).unwrap();
    let z = &summary[0];
    assert_eq!(z.quantity, "Z");
    let close = |csv: f64, exact: f64| (csv - exact).abs() <= 5e-6 * exact.abs();
    assert!(close(z.mean, run.mean), "{} {}", z.mean, run.mean);
    assert!(close(z.median, run.median));
    assert_eq!(z.ess, None);
    let weights = read_weights(&dir).unwrap();
    for (row, (leaf, w)) in weights.iter().zip(run.leaves.iter().zip(&run.weights)) {
        assert_eq!(row.leaf, leaf.as_str());
        assert!((row.weight - w).abs() <= 5e-6 * w.abs());
    }

    let report = treepop(&["report", dir.to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    let text = String::from_utf8(report.stdout).unwrap();
    for row in &summary {
        for v in [row.mean, row.sd, row.q025, row.median, row.q975] {
            assert!(
                text.contains(&sig6(v)),
                "{} missing {}",
                row.quantity,
                sig6(v)
            );
            assert_eq!(sig6(sig6(v).parse().unwrap()), sig6(v));
        }
    }
    for row in &weights {
        assert!(text.contains(&sig6(row.weight)));
    }
    let meta = read_metadata(&dir).unwrap();
    assert_eq!(meta.seed, 5);
    assert_eq!(meta.tree_name, "simple_opioid");
    assert_eq!(meta.tree_digest.len(), 64);
}

#[test]
fn digest_depends_only_on_content() {
    let tmp = tempfile::tempdir().unwrap();
    let copy = tmp.path().join("copy.tree");
    let text = fs::read_to_string(data("full_opioid.tree")).unwrap();
    fs::write(&copy, format!("# a different comment\n{text}")).unwrap();
    let run = |tree: &str, name: &str| {
        let o = tmp.path().join(name);
        assert_eq!(
            code(&treepop(&[
                "wmm",
                tree,
                "--iterations",
                "200",
                "--seed",
                "1",
                "--out",
                o.to_str().unwrap()
            ])),
            0
        );
        read_metadata(&o).unwrap().tree_digest
    };
    let a = run(&data("full_opioid.tree"), "a");
    assert_eq!(a, run(copy.to_str().unwrap(), "b"));
    assert_ne!(a, run(&data("simple_opioid.tree"), "c"));
}
