//! File formats, checkpoints and subcommands around [`think_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod inspect;
pub mod io;
pub mod report;
