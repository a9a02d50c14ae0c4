//! Configuration, CSV artifacts and subcommands behind the `svcgp` binary.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod data;
pub mod presets;
pub mod summary;
