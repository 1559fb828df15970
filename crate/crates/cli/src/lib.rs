//! Command-line pipeline around the `flexcap` library.

pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{exit_code, Mode, PipelineError};
