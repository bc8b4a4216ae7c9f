//! File formats, JSON configs, CSV/JSON reports and the command runner
//! around `binquant-core`.

pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod run;

pub use binquant_core as core;
pub use error::{ErrorKind, RunError, RunResult};
