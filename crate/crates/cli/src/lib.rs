//! Batch runner: reads a scenario configuration and writes deterministic
//! JSON and CSV artifacts.

pub mod config;
pub mod error;
pub mod plan;
pub mod run;

pub use config::{LoadedConfig, Scenario, ScenarioConfig};
pub use error::{ConfigError, Diagnostic, RunError};
pub use run::{execute, prepare, run, Artifacts};

/// `git describe`-style version fixed at build time.
pub const VERSION: &str = env!("MNL_VERSION");
