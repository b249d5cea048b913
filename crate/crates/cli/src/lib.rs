//! Command-line driver for the `srdf_kit` engines: TOML configs in, CSV
//! tables and a JSON summary out.

pub mod config;
pub mod error;
pub mod format;
pub mod run;

pub use config::{RunConfig, Task};
pub use error::{CliError, Result};
pub use run::{parse_summary, run, Artifacts, Summary};
