//! Library side of the `dgfilter` command: config file, dataset index and
//! the subcommand implementations.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod table;
