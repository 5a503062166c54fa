//! File formats, result bundles, scenario suites and the command-line
//! interface for `treepop-core`.

pub mod bundle;
pub mod cli;
pub mod experiments;
mod location;
pub mod parallel;
pub mod spec_file;
pub mod suite_file;
