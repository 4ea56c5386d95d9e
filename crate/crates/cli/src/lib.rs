//! Library surface of the command-line front end: run configuration
//! plus the subcommand implementations and their report record types.
//! The binary in `main.rs` is a thin argument-parsing shell over this.

pub mod commands;
pub mod config;
