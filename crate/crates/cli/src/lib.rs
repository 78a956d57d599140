//! Command-line entry points and the HTTP service.

pub mod commands;
pub mod context;
pub mod error;
pub mod server;

pub use commands::{run, run_demo, Cli, Command, DemoResult};
pub use context::Context;
pub use error::CliError;
