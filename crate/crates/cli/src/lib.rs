//! Configuration, orchestration and reports for the `morsekit` command.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use pipeline::{run, Command, Outcome};
pub use report::RunReport;
