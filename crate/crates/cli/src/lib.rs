//! Configuration and command orchestration behind the `cvsn` binary.

pub mod config;
pub mod run;

pub use config::RunConfig;
pub use run::{run, Command};
