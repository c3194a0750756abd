//! Command-line harness for wplab: configuration, sweeps, export and the
//! acceptance suite.

pub mod accept;
pub mod commands;
pub mod config;
pub mod output;
pub mod sweep;
