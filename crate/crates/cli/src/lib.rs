//! Batch driver: TOML config in, CSV and JSON results out.

pub mod checks;
pub mod config;
pub mod error;
pub mod run;
pub mod slice;

pub use checks::{Check, CheckReport};
pub use config::{RunConfig, SliceAxis};
pub use error::{Category, RunError, RunResult};
pub use run::{run, RunOptions, RunReport};
pub use slice::{export_slice, SliceRow};
