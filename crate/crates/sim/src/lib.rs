//! File formats and command implementations for the `dersec` binary.

pub mod cli;
pub mod config;
pub mod io;
