//! Command-line front end: generate benchmark sequences, run an engine
//! mode over them and compare finished runs.

pub mod error;
mod files;
pub mod generate;
pub mod report;
pub mod run;

pub use error::{CliError, CliResult};
pub use generate::{cmd_generate, load_sequence_spec};
pub use report::{build_report, cmd_report, render_csv, render_text, Report, ReportRow};
pub use run::{cmd_run, RunManifest, RunOptions, RunOutcome, RunRecords, RunSummary};
