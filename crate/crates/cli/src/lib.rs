//! Command-line front end: INI configs, run directories, audit reports and sweeps.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod svg;
pub mod sweep;

pub use config::{parse_config, IniDocument, RunManifest};
pub use error::{CliError, CliResult};
