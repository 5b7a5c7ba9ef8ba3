//! Front end of the `chaintube` binary: configuration, commands, reports.

pub mod commands;
pub mod config;
pub mod report;
