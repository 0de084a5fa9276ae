//! File formats and run orchestration around [`lightgcn_core`].

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod run;

pub use error::{CliError, Result};

/// Engine version recorded in `run.json`.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
