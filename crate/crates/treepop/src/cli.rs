//! Command-line interface.
//!
//! Exit status: 0 success, 1 usage error, 2 data or model error, 3
//! convergence flags raised under `--strict-convergence`. Diagnostics go to
//! standard error; only `report` writes to standard output.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use treepop_core::{BayesModel, ChainConfig, LatentKernel, WmmConfig};

use crate::bundle::{self, convergence_flags, sig6, write_bayes_bundle, write_wmm_bundle};
use crate::experiments::{run_suite, write_suite_output};
use crate::parallel;
use crate::spec_file::{load_tree_spec, ParseOptions, Parsed};
use crate::suite_file::load_suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "treepop",
    version,
    about = "Root population size estimation from evidence trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Downgrade unknown fields in input files to warnings.
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kernel {
    Collapsed,
    Conditional,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a tree file.
    Validate {
        tree: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Weighted multiplier method.
    Wmm {
        tree: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.95)]
        interval_mass: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Bayesian tree model (needs a priors block).
    Bayes {
        tree: PathBuf,
        #[arg(long, default_value_t = 6)]
        chains: usize,
        /// Iterations per chain, burn-in included.
        #[arg(long, default_value_t = 200_000)]
        iterations: usize,
        #[arg(long, default_value_t = 100_000)]
        burn_in: usize,
        #[arg(long, default_value_t = 10)]
        thin: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Kernel::Collapsed)]
        kernel: Kernel,
        /// Also write every kept draw to samples.csv.
        #[arg(long)]
        samples: bool,
        #[arg(long)]
        strict_convergence: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario suite.
    Suite {
        scenarios: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write samples.csv for Bayes scenarios.
        #[arg(long)]
        samples: bool,
        #[arg(long)]
        strict_convergence: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Print a human-readable summary of a result bundle.
    Report { bundle: PathBuf },
}

/// Error with an exit status.
struct Failure(i32, String);

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure(EXIT_DATA, e.to_string())
}

fn options(c: &Common) -> ParseOptions {
    ParseOptions { lenient: c.lenient }
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn load<T>(r: Result<Parsed<T>, impl std::fmt::Display>, path: &Path) -> Result<T, Failure> {
    let parsed = r.map_err(|e| Failure(EXIT_DATA, format!("{}: {e}", path.display())))?;
    warn(&parsed.warnings);
    Ok(parsed.value)
}

/// Parse `args` (program name first) and run; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Validate { tree, common } => {
            let spec = load(load_tree_spec(&tree, options(&common)), &tree)?;
            let informed = spec.tree.informed_leaves().len();
            eprintln!(
                "{}: valid, {} nodes, {} informed leaves{}",
                spec.tree.name,
                spec.tree.nodes.len(),
                informed,
                if spec.priors.is_some() {
                    ", priors present"
                } else {
                    ""
                }
            );
            Ok(EXIT_OK)
        }
        Command::Wmm {
            tree,
            iterations,
            seed,
            interval_mass,
            out,
            common,
        } => {
            let spec = load(load_tree_spec(&tree, options(&common)), &tree)?;
            let config = WmmConfig {
                iterations,
                seed,
                interval_mass,
            };
            let run = parallel::run_wmm(&spec.tree, &config).map_err(data)?;
            write_wmm_bundle(&out, &spec, &config, &run).map_err(data)?;
            eprintln!(
                "{}: mean {}, median {}, interval ({}, {})",
                spec.tree.name,
                sig6(run.mean),
                sig6(run.median),
                sig6(run.quantile_interval.0),
                sig6(run.quantile_interval.1)
            );
            Ok(EXIT_OK)
        }
        Command::Bayes {
            tree,
            chains,
            iterations,
            burn_in,
            thin,
            seed,
            kernel,
            samples,
            strict_convergence,
            out,
            common,
        } => {
            let spec = load(load_tree_spec(&tree, options(&common)), &tree)?;
            let priors = spec.priors.as_ref().ok_or_else(|| {
                Failure(EXIT_DATA, format!("{}: no priors block", tree.display()))
            })?;
            let model = BayesModel::build(&spec.tree, priors).map_err(data)?;
            let config = ChainConfig {
                chains,
                iterations,
                burn_in,
                thin,
                seed,
                kernel: match kernel {
                    Kernel::Collapsed => LatentKernel::Collapsed,
                    Kernel::Conditional => LatentKernel::Conditional,
                },
                keep_traces: true,
                ..ChainConfig::default()
            };
            let summary = parallel::run_chains(&model, &config).map_err(data)?;
            write_bayes_bundle(&out, &spec, &config, &summary, samples).map_err(data)?;
            let flags = convergence_flags(&summary);
            if let Some(root) = spec.tree.root().and_then(|r| summary.get(r.id.as_str())) {
                eprintln!(
                    "{}: {} mean {}, 95% interval ({}, {})",
                    spec.tree.name,
                    root.name,
                    sig6(root.mean),
                    sig6(root.q025),
                    sig6(root.q975)
                );
            }
            for f in &flags {
                eprintln!("convergence: {f}");
            }
            Ok(if strict_convergence && !flags.is_empty() {
                EXIT_CONVERGENCE
            } else {
                EXIT_OK
            })
        }
        Command::Suite {
            scenarios,
            out,
            samples,
            strict_convergence,
            common,
        } => {
            let mut suite = load(load_suite(&scenarios, options(&common)), &scenarios)?;
            for s in &mut suite.scenarios {
                s.chain.keep_traces = true;
            }
            let report = run_suite(&suite).map_err(data)?;
            write_suite_output(&out, &report, samples).map_err(data)?;
            for c in report.checks() {
                eprintln!(
                    "[{}] {}: {}",
                    if c.passed { "pass" } else { "fail" },
                    c.scenario,
                    c.description
                );
            }
            let flagged = report.flagged();
            for s in &flagged {
                eprintln!(
                    "convergence: scenario {} flagged: {}",
                    s.name,
                    s.flags.join("; ")
                );
            }
            Ok(if strict_convergence && !flagged.is_empty() {
                EXIT_CONVERGENCE
            } else {
                EXIT_OK
            })
        }
        Command::Report { bundle: dir } => {
            let text = bundle::render_report(&dir).map_err(data)?;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(data)?;
            Ok(EXIT_OK)
        }
    }
}
