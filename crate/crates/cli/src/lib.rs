//! Configuration and subcommand plumbing for the `spiral-euler` binary.

pub mod config;
pub mod run;
