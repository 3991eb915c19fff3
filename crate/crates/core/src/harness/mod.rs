//! Configuration, persistence and the pipelines behind the command line.

pub mod config;
pub mod io;
pub mod run;

pub use config::{Method, Resolved, RunConfig, Setting, VariationalMode};
pub use run::{run, Command};
