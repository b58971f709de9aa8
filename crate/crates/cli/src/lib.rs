//! Command-line entry points and the HTTP session API.

pub mod commands;
pub mod server;

pub use commands::{run, Cli, Command, MissingInput};
