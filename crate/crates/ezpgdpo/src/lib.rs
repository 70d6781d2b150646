//! Command-line layer: configuration files, checkpoints, run directories,
//! manifests and command orchestration on top of `ezpgdpo-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod executor;
pub mod output;
pub mod run;

pub use config::RunConfig;
pub use error::{AppError, AppResult};
