//! File formats, run configuration and the commands behind the `svgene`
//! binary.

pub mod commands;
pub mod config;
pub mod io;
