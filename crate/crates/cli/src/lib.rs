//! Experiment runner for `aploss-core`: layered `key = value` settings, one
//! run function per subcommand and the files each run writes.

pub mod config;
pub mod output;
pub mod runs;
