//! Result bundles: a directory of CSV tables plus `metadata.json`.
//!
//! | file | engine | columns |
//! |------|--------|---------|
//! | `summary.csv` | both | quantity, mean, sd, q2.5, median, q97.5, ess, rhat |
//! | `weights.csv` | wmm | leaf, count, weight, path_mean, path_sd |
//! | `samples.csv` | wmm | iteration, quantity, value, weight |
//! | `samples.csv` | bayes (opt-in) | chain, draw, quantity, value |
//! | `histogram.csv` | both | quantity, lower, upper, count |
//! | `acf.csv` | bayes | quantity, lag, value |
//!
//! Numbers are written with 6 significant digits. Nothing time- or
//! host-dependent is recorded, so equal inputs give byte-identical bundles.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use treepop_core::stats;
use treepop_core::{ChainConfig, LatentKernel, PosteriorSummary, WmmConfig, WmmRun};

use crate::spec_file::{serialize_tree_spec, TreeSpec};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0} is not a result bundle")]
    NotABundle(PathBuf),
}

/// Format with 6 significant digits, like C's `%.6g`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let fixed = format!("{x:.*}", (5 - exp) as usize);
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// SHA-256 of the canonical serialization.
pub fn tree_digest(spec: &TreeSpec) -> String {
    let bytes = Sha256::digest(serialize_tree_spec(spec).as_bytes());
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum RunConfig {
    Wmm {
        iterations: usize,
        interval_mass: f64,
    },
    Bayes {
        chains: usize,
        iterations: usize,
        burn_in: usize,
        thin: usize,
        kernel: String,
        tune: bool,
        step_sizes: Option<Vec<u64>>,
    },
}

impl RunConfig {
    pub fn wmm(c: &WmmConfig) -> Self {
        RunConfig::Wmm {
            iterations: c.iterations,
            interval_mass: c.interval_mass,
        }
    }

    pub fn bayes(c: &ChainConfig) -> Self {
        RunConfig::Bayes {
            chains: c.chains,
            iterations: c.iterations,
            burn_in: c.burn_in,
            thin: c.thin,
            kernel: kernel_name(c.kernel).into(),
            tune: c.tune,
            step_sizes: c.step_sizes.clone(),
        }
    }
}

pub fn kernel_name(k: LatentKernel) -> &'static str {
    match k {
        LatentKernel::Collapsed => "collapsed",
        LatentKernel::Conditional => "conditional",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub tree_name: String,
    pub tree_digest: String,
    pub results: Results,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum Results {
    Wmm {
        mean: f64,
        median: f64,
        interval_mass: f64,
        quantile_interval: [f64; 2],
        normal_interval: [f64; 2],
        /// Ridge added to the path covariance before inversion.
        ridge: f64,
        importance_weighted: bool,
    },
    Bayes {
        chains: usize,
        kept_per_chain: usize,
        #[serde(with = "any_f64")]
        max_rhat: f64,
        #[serde(with = "any_f64")]
        min_ess: f64,
        flagged: Vec<String>,
        acceptance: Vec<Acceptance>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub latent: String,
    pub step_size: u64,
    #[serde(with = "any_f64")]
    pub rate: f64,
}

/// JSON has no infinities or NaN; those are written as strings.
mod any_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&super::sig6(*x))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One row of `summary.csv`, as read back.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    pub mean: f64,
    pub sd: f64,
    #[serde(rename = "q2.5")]
    pub q025: f64,
    pub median: f64,
    #[serde(rename = "q97.5")]
    pub q975: f64,
    pub ess: Option<f64>,
    pub rhat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct WeightRow {
    pub leaf: String,
    pub count: u64,
    pub weight: f64,
    pub path_mean: f64,
    pub path_sd: f64,
}

/// Convergence thresholds used to flag quantities.
pub const MAX_RHAT: f64 = 1.05;
pub const MIN_ESS: f64 = 400.0;

/// Quantities with R-hat above [`MAX_RHAT`] or ESS below [`MIN_ESS`].
pub fn convergence_flags(summary: &PosteriorSummary) -> Vec<String> {
    let mut flags = Vec::new();
    for q in &summary.quantities {
        if q.rhat > MAX_RHAT || q.rhat.is_nan() {
            flags.push(format!("{}: rhat {}", q.name, sig6(q.rhat)));
        }
        if q.ess < MIN_ESS {
            flags.push(format!("{}: ess {}", q.name, sig6(q.ess)));
        }
    }
    flags
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> BundleError + '_ {
    move |source| BundleError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), BundleError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BundleError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| BundleError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn summary_row(
    name: &str,
    x: &[f64],
    w: Option<&[f64]>,
    ess: Option<f64>,
    rhat: Option<f64>,
) -> Vec<String> {
    let (mean, sd, lo, med, hi) = match w {
        Some(w) => (
            stats::weighted_mean(x, w),
            stats::weighted_variance(x, w).sqrt(),
            stats::weighted_quantile(x, w, 0.025),
            stats::weighted_quantile(x, w, 0.5),
            stats::weighted_quantile(x, w, 0.975),
        ),
        None => {
            let s = stats::sorted(x);
            (
                stats::mean(x),
                stats::sd(x),
                stats::quantile_sorted(&s, 0.025),
                stats::quantile_sorted(&s, 0.5),
                stats::quantile_sorted(&s, 0.975),
            )
        }
    };
    vec![
        name.to_string(),
        sig6(mean),
        sig6(sd),
        sig6(lo),
        sig6(med),
        sig6(hi),
        ess.map(sig6).unwrap_or_default(),
        rhat.map(sig6).unwrap_or_default(),
    ]
}

const SUMMARY_HEADER: [&str; 8] = [
    "quantity", "mean", "sd", "q2.5", "median", "q97.5", "ess", "rhat",
];

/// Equal-width bins over the sample range; counts are importance-weighted
/// and rescaled to the sample size when weights are given.
pub fn histogram(x: &[f64], w: Option<&[f64]>, bins: usize) -> Vec<(f64, f64, f64)> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() || !lo.is_finite() || !hi.is_finite() {
        return Vec::new();
    }
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0.0; bins];
    let scale = w.map_or(1.0, |w| x.len() as f64 / w.iter().sum::<f64>());
    for (i, &v) in x.iter().enumerate() {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += w.map_or(1.0, |w| w[i] * scale);
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
        .collect()
}

fn histogram_rows(name: &str, x: &[f64], w: Option<&[f64]>, rows: &mut Vec<Vec<String>>) {
    for (lo, hi, c) in histogram(x, w, HISTOGRAM_BINS) {
        rows.push(vec![name.to_string(), sig6(lo), sig6(hi), sig6(c)]);
    }
}

fn prepare_dir(dir: &Path) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn metadata(spec: &TreeSpec, seed: u64, config: RunConfig, results: Results) -> Metadata {
    Metadata {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config,
        tree_name: spec.tree.name.clone(),
        tree_digest: tree_digest(spec),
        results,
    }
}

/// Write a WMM bundle into `dir`, creating it if needed.
pub fn write_wmm_bundle(
    dir: &Path,
    spec: &TreeSpec,
    config: &WmmConfig,
    run: &WmmRun,
) -> Result<(), BundleError> {
    prepare_dir(dir)?;
    let root = spec
        .tree
        .root()
        .map_or("root".to_string(), |r| r.id.to_string());
    let weighted = run.importance.iter().any(|&w| w != 1.0);
    let w = weighted.then_some(&run.importance[..]);

    let mut rows = vec![summary_row(&root, &run.combined_samples, w, None, None)];
    let mut weights = Vec::new();
    for (k, leaf) in run.leaves.iter().enumerate() {
        let col = run.path_column(k);
        rows.push(summary_row(&format!("path_{leaf}"), &col, w, None, None));
        let (m, s) = match w {
            Some(w) => (
                stats::weighted_mean(&col, w),
                stats::weighted_variance(&col, w).sqrt(),
            ),
            None => (stats::mean(&col), stats::sd(&col)),
        };
        weights.push(vec![
            leaf.to_string(),
            run.leaf_counts[k].to_string(),
            sig6(run.weights[k]),
            sig6(m),
            sig6(s),
        ]);
    }
    write_csv(&dir.join("summary.csv"), &SUMMARY_HEADER, &rows)?;
    write_csv(
        &dir.join("weights.csv"),
        &["leaf", "count", "weight", "path_mean", "path_sd"],
        &weights,
    )?;
    let samples: Vec<Vec<String>> = run
        .combined_samples
        .iter()
        .zip(&run.importance)
        .enumerate()
        .map(|(i, (v, iw))| vec![i.to_string(), root.clone(), sig6(*v), sig6(*iw)])
        .collect();
    write_csv(
        &dir.join("samples.csv"),
        &["iteration", "quantity", "value", "weight"],
        &samples,
    )?;
    let mut hist = Vec::new();
    histogram_rows(&root, &run.combined_samples, w, &mut hist);
    write_csv(
        &dir.join("histogram.csv"),
        &["quantity", "lower", "upper", "count"],
        &hist,
    )?;

    let results = Results::Wmm {
        mean: run.mean,
        median: run.median,
        interval_mass: run.interval_mass,
        quantile_interval: [run.quantile_interval.0, run.quantile_interval.1],
        normal_interval: [run.normal_interval.0, run.normal_interval.1],
        ridge: run.ridge,
        importance_weighted: weighted,
    };
    write_json(
        &dir.join("metadata.json"),
        &metadata(spec, config.seed, RunConfig::wmm(config), results),
    )
}

/// Write a Bayes bundle. Histograms and `samples.csv` need traces in
/// `summary`; `samples.csv` is only written when `samples` is set.
pub fn write_bayes_bundle(
    dir: &Path,
    spec: &TreeSpec,
    config: &ChainConfig,
    summary: &PosteriorSummary,
    samples: bool,
) -> Result<(), BundleError> {
    prepare_dir(dir)?;
    let rows: Vec<Vec<String>> = summary
        .quantities
        .iter()
        .map(|q| {
            vec![
                q.name.clone(),
                sig6(q.mean),
                sig6(q.sd),
                sig6(q.q025),
                sig6(q.median),
                sig6(q.q975),
                sig6(q.ess),
                sig6(q.rhat),
            ]
        })
        .collect();
    write_csv(&dir.join("summary.csv"), &SUMMARY_HEADER, &rows)?;

    let mut acf = Vec::new();
    for (q, series) in summary.quantities.iter().zip(&summary.acf) {
        for (lag, v) in series.iter().enumerate() {
            acf.push(vec![q.name.clone(), lag.to_string(), sig6(*v)]);
        }
    }
    write_csv(&dir.join("acf.csv"), &["quantity", "lag", "value"], &acf)?;

    if let Some(traces) = &summary.traces {
        let mut hist = Vec::new();
        for (q, chains) in summary.quantities.iter().zip(traces) {
            let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
            histogram_rows(&q.name, &pooled, None, &mut hist);
        }
        write_csv(
            &dir.join("histogram.csv"),
            &["quantity", "lower", "upper", "count"],
            &hist,
        )?;
        if samples {
            let mut rows = Vec::new();
            for (c, _) in traces.first().into_iter().flatten().enumerate() {
                for (q, chains) in summary.quantities.iter().zip(traces) {
                    for (d, v) in chains[c].iter().enumerate() {
                        rows.push(vec![c.to_string(), d.to_string(), q.name.clone(), sig6(*v)]);
                    }
                }
            }
            write_csv(
                &dir.join("samples.csv"),
                &["chain", "draw", "quantity", "value"],
                &rows,
            )?;
        }
    }

    let results = Results::Bayes {
        chains: summary.chains,
        kept_per_chain: summary.kept_per_chain,
        max_rhat: summary.max_rhat(),
        min_ess: summary.min_ess(),
        flagged: convergence_flags(summary),
        acceptance: summary
            .acceptance
            .iter()
            .map(|(latent, step_size, rate)| Acceptance {
                latent: latent.clone(),
                step_size: *step_size,
                rate: *rate,
            })
            .collect(),
    };
    write_json(
        &dir.join("metadata.json"),
        &metadata(spec, config.seed, RunConfig::bayes(config), results),
    )
}

pub(crate) fn read_rows<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<Vec<T>, BundleError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(csv_err(path))
}

pub fn read_metadata(dir: &Path) -> Result<Metadata, BundleError> {
    let path = dir.join("metadata.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| BundleError::Json { path, source })
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>, BundleError> {
    read_rows(&dir.join("summary.csv"))
}

pub fn read_weights(dir: &Path) -> Result<Vec<WeightRow>, BundleError> {
    read_rows(&dir.join("weights.csv"))
}

/// Human-readable summary of a bundle, built from its files.
pub fn render_report(dir: &Path) -> Result<String, BundleError> {
    if dir.join("report.csv").is_file() {
        return crate::experiments::render_suite_report(dir);
    }
    if !dir.join("metadata.json").is_file() {
        return Err(BundleError::NotABundle(dir.to_path_buf()));
    }
    let meta = read_metadata(dir)?;
    let summary = read_summary(dir)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "tree {} ({})",
        meta.tree_name,
        &meta.tree_digest[..12.min(meta.tree_digest.len())]
    );
    let _ = writeln!(out, "{} {}, seed {}", meta.tool, meta.version, meta.seed);
    match &meta.config {
        RunConfig::Wmm { iterations, .. } => {
            let _ = writeln!(out, "weighted multiplier method, {iterations} iterations");
        }
        RunConfig::Bayes {
            chains,
            iterations,
            burn_in,
            thin,
            kernel,
            ..
        } => {
            let _ = writeln!(
                out,
                "bayes, {chains} chains x {iterations} iterations, burn-in {burn_in}, thin {thin}, {kernel} kernel"
            );
        }
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>10} {:>8}",
        "quantity", "mean", "sd", "q2.5", "median", "q97.5", "ess", "rhat"
    );
    for r in &summary {
        let opt = |v: Option<f64>| v.map(sig6).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>10} {:>8}",
            r.quantity,
            sig6(r.mean),
            sig6(r.sd),
            sig6(r.q025),
            sig6(r.median),
            sig6(r.q975),
            opt(r.ess),
            opt(r.rhat)
        );
    }
    match &meta.results {
        Results::Wmm {
            interval_mass,
            quantile_interval,
            normal_interval,
            ..
        } => {
            let weights = read_weights(dir)?;
            let _ = writeln!(out, "\npath weights");
            for w in &weights {
                let _ = writeln!(out, "  {:<8} {:>8} {:>10}", w.leaf, w.count, sig6(w.weight));
            }
            let pct = sig6(interval_mass * 100.0);
            let _ = writeln!(
                out,
                "\n{pct}% quantile interval ({}, {}); normal interval ({}, {})",
                sig6(quantile_interval[0]),
                sig6(quantile_interval[1]),
                sig6(normal_interval[0]),
                sig6(normal_interval[1])
            );
        }
        Results::Bayes { flagged, .. } => {
            if flagged.is_empty() {
                let _ = writeln!(
                    out,
                    "\nall quantities meet rhat <= {MAX_RHAT} and ess >= {MIN_ESS}"
                );
            } else {
                let _ = writeln!(out, "\nconvergence flags:");
                for f in flagged {
                    let _ = writeln!(out, "  {f}");
                }
            }
        }
    }
    Ok(out)
}
