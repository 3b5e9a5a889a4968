//! Library behind the `lidarsphere` binary.
//!
//! The binary is a thin argument parser over this crate: [`config`] holds
//! the JSON pipeline configuration, [`scans`] discovers input scans and
//! lays out their artifact directories, and [`pipeline`] implements one
//! function per subcommand. Keeping the stages callable as plain functions
//! lets integration tests drive the full pipeline in process.

pub mod config;
pub mod error;
pub mod featureset;
pub mod pipeline;
pub mod scans;

pub use error::{CliError, CliResult};
