//! Command implementations, configuration, and checkpoint persistence for
//! the `avitopics` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod train;
