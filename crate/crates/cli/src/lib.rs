//! Configuration and execution of benchmark runs for the `lininv` binary.

pub mod config;
pub mod run;
