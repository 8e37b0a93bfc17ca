//! Command-line front end for `betadyn`: JSON configs in, JSON reports and
//! CSV step functions out.

pub mod config;
pub mod exit;
pub mod run;

pub use config::{validate_report_json, Command, RunConfig};
pub use exit::CliError;
pub use run::{run, Output};
